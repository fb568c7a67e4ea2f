"""Controlled vector-field network: frozen base trunk + trainable control branch.

The base is a small residual MLP over the flattened image, with a sinusoidal
time embedding and a conditioning slot for the flattened mask plus a one-bit
"unconditional" flag. The control branch mirrors the trunk widths and feeds
its features into the base trunk through zero-initialized linear layers, so a
freshly built controlled net computes exactly the same function as its base.

Conventions:
  * the conditioning input is [mask_flat, flag]; raising the flag zeroes the
    mask portion before the first layer,
  * base parameters are frozen after unconditional pretraining, only the
    control branch trains afterwards,
  * a frozen view shares the underlying arrays, so it always reflects the
    current weights while blocking every gradient path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, concat_cols


class ParamSet:
    """Named parameter tensors with a shared frozen flag and step counter."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.step = 0  # optimizer step counter

    def add(self, name: str, data: np.ndarray, frozen: bool = False) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=not frozen)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def trainable_items(self):
        return [(n, p) for n, p in self._params.items() if p.requires_grad]

    @property
    def frozen(self) -> bool:
        return all(not p.requires_grad for p in self._params.values())

    def set_frozen(self, frozen: bool) -> None:
        for p in self._params.values():
            p.requires_grad = not frozen

    def view(self, frozen: bool = True) -> "ParamSet":
        """A ParamSet over the same arrays with an independent frozen flag."""
        out = ParamSet.__new__(ParamSet)
        out._params = {}
        out.step = self.step
        for name, p in self._params.items():
            t = Tensor.__new__(Tensor)
            t.data = p.data
            t.grad = None
            t.requires_grad = not frozen
            t._parents = ()
            t._backward = None
            out._params[name] = t
        return out


def sinusoidal_embedding(t: np.ndarray, width: int) -> np.ndarray:
    """Sin/cos features of scalar times in [0, 1], shape (B, width).

    Frequencies rise geometrically from 1 to 1000 so that nearby times on a
    1/20 grid map to well-separated feature vectors; with the usual falling
    frequencies every feature would be nearly linear over the unit interval
    and the net could not resolve time at all.
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = width // 2
    freqs = np.exp(math.log(1000.0) * np.arange(half) / (half - 1))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


@dataclass
class NetSpec:
    image_side: int = 16
    hidden: int = 128
    blocks: int = 3
    time_embed: int = 32

    @property
    def flat(self) -> int:
        return self.image_side * self.image_side

    @property
    def cond_width(self) -> int:
        return self.flat + 1  # mask pixels + unconditional flag bit


def _init_linear(ps: ParamSet, name: str, fan_in: int, fan_out: int, rng, zero: bool = False):
    if zero:
        w = np.zeros((fan_in, fan_out))
        b = np.zeros(fan_out)
    else:
        std = 1.0 / math.sqrt(fan_in)
        w = rng.normal(0.0, std, size=(fan_in, fan_out))
        b = np.zeros(fan_out)
    ps.add(f"{name}.w", w)
    ps.add(f"{name}.b", b)


def _linear(ps: ParamSet, name: str, x: Tensor) -> Tensor:
    return x @ ps[f"{name}.w"] + ps[f"{name}.b"]


class ControlledVectorFieldNet:
    """Predicts the transport field v(x_t, t, cond) on flattened images."""

    def __init__(self, spec: NetSpec, base: ParamSet, control: ParamSet):
        self.spec = spec
        self.base = base
        self.control = control

    @classmethod
    def build(cls, spec: NetSpec, seed: int) -> "ControlledVectorFieldNet":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6E65]))
        base = ParamSet()
        _init_linear(base, "x_proj", spec.flat, spec.hidden, rng)
        _init_linear(base, "t_proj", spec.time_embed, spec.hidden, rng)
        _init_linear(base, "cond_proj", spec.cond_width, spec.hidden, rng)
        for i in range(spec.blocks):
            _init_linear(base, f"block{i}.fc1", spec.hidden, spec.hidden, rng)
            _init_linear(base, f"block{i}.fc2", spec.hidden, spec.hidden, rng)
        _init_linear(base, "out", spec.hidden, spec.flat, rng)
        # time-gated input skip: the straight-path field carries a
        # -x_t/(1-t) diagonal term that a width<flat trunk cannot represent;
        # a scalar gate on x restores it (zero map at init)
        _init_linear(base, "gate", spec.time_embed, 1, rng, zero=True)

        control = ParamSet()
        _init_linear(control, "x_proj", spec.flat, spec.hidden, rng)
        _init_linear(control, "t_proj", spec.time_embed, spec.hidden, rng)
        _init_linear(control, "cond_proj", spec.cond_width, spec.hidden, rng)
        for i in range(spec.blocks):
            _init_linear(control, f"block{i}.fc1", spec.hidden, spec.hidden, rng)
            _init_linear(control, f"block{i}.fc2", spec.hidden, spec.hidden, rng)
            # injection into the frozen trunk starts as the zero map
            _init_linear(control, f"inject{i}", spec.hidden, spec.hidden, rng, zero=True)
        return cls(spec, base, control)

    # -- forward ---------------------------------------------------------------

    def _prepare_inputs(self, x, t, cond, uncond_flag):
        x = as_tensor(x)
        if x.data.ndim == 1:
            x = x.reshape(1, -1)
        batch = x.data.shape[0]
        if x.data.shape[1] != self.spec.flat:
            raise ValueError(
                f"input width {x.data.shape[1]} does not match image size {self.spec.flat}"
            )

        cond = as_tensor(cond)
        if cond.data.ndim == 1:
            cond = cond.reshape(1, -1)
        if cond.data.shape[0] == 1 and batch > 1:
            cond = Tensor(np.broadcast_to(cond.data, (batch, cond.data.shape[1])).copy())
        if cond.data.shape != (batch, self.spec.flat):
            raise ValueError(
                f"conditioning shape {cond.data.shape} does not match ({batch}, {self.spec.flat})"
            )

        flags = np.zeros(batch, dtype=bool) if uncond_flag is None else np.atleast_1d(uncond_flag)
        if flags.shape == (1,) and batch > 1:
            flags = np.repeat(flags, batch)
        if flags.shape != (batch,):
            raise ValueError("uncond flags must align with the batch")

        # the flag zeroes the mask slot before the first layer and rides along
        # as an extra input bit
        keep = Tensor((~flags).astype(np.float64)[:, None])
        cond_masked = cond * keep
        flag_col = Tensor(flags.astype(np.float64)[:, None])
        cond_in = concat_cols([cond_masked, flag_col])

        t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if t_arr.shape == (1,) and batch > 1:
            t_arr = np.repeat(t_arr, batch)
        if t_arr.shape != (batch,):
            raise ValueError("time values must align with the batch")
        temb = Tensor(sinusoidal_embedding(t_arr, self.spec.time_embed))
        return x, cond_in, temb

    def forward(self, x, t, cond, uncond_flag=None, use_control: bool = True) -> Tensor:
        """Vector field prediction, shape matching x (rows are samples)."""
        squeeze = np.asarray(x.data if isinstance(x, Tensor) else x).ndim == 1
        x, cond_in, temb = self._prepare_inputs(x, t, cond, uncond_flag)

        h = _linear(self.base, "x_proj", x) + _linear(self.base, "t_proj", temb)
        h = h + _linear(self.base, "cond_proj", cond_in)
        if use_control:
            g = _linear(self.control, "x_proj", x) + _linear(self.control, "t_proj", temb)
            g = g + _linear(self.control, "cond_proj", cond_in)
        for i in range(self.spec.blocks):
            hb = _linear(self.base, f"block{i}.fc2", _linear(self.base, f"block{i}.fc1", h.silu()).silu())
            if use_control:
                g = g + _linear(
                    self.control, f"block{i}.fc2", _linear(self.control, f"block{i}.fc1", g.silu()).silu()
                )
                h = h + hb + _linear(self.control, f"inject{i}", g)
            else:
                h = h + hb
        v = _linear(self.base, "out", h.silu()) + x * _linear(self.base, "gate", temb)
        return v.reshape(-1) if squeeze else v

    def forward_base(self, x, t, cond, uncond_flag=None) -> Tensor:
        """Base trunk alone, ignoring the control branch entirely."""
        return self.forward(x, t, cond, uncond_flag, use_control=False)

    # -- freezing --------------------------------------------------------------

    @property
    def frozen(self) -> bool:
        return self.base.frozen and self.control.frozen

    def frozen_view(self) -> "ControlledVectorFieldNet":
        """Same weights, every gradient path blocked; tracks in-place updates."""
        return ControlledVectorFieldNet(self.spec, self.base.view(), self.control.view())

    def trainable_params(self) -> list[tuple[str, Tensor]]:
        return [(f"base/{n}", p) for n, p in self.base.trainable_items()] + [
            (f"control/{n}", p) for n, p in self.control.trainable_items()
        ]
