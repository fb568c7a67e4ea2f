"""Probability paths and deterministic integrators for the transport field.

The path convention is noise at t=0, data at t=1, linear interpolation in
between, so the target field is constant along each path. Sampling is plain
Euler with classifier-free guidance; training-time generation splits into a
frozen multi-step rollout (detached by contract) and a single tunable jump
that carries all the gradient.

The Euler loops keep a Welford running mean of the field values and rebuild
the state as x = x0 + t_k * mean each step. This is algebraically identical
to the textbook update x += dt * v but avoids accumulated rounding: a field
that is constant in (x, t) integrates to x0 + span * v bitwise, for any step
count, because the running mean of identical arrays never moves and the
final time coordinate steps/steps is exactly 1.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import NonFiniteError, Tensor, as_tensor
from .config import SamplerConfig, grid_index_of
from .nets import ControlledVectorFieldNet


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def interpolate(x1, eps, t: float) -> Tensor:
    """Point on the straight path: t*x1 + (1-t)*eps.

    Exact at the endpoints: t=0 returns eps, t=1 returns x1.
    """
    x1, eps = as_tensor(x1), as_tensor(eps)
    _check_same_shape(x1, eps, "interpolate")
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"time {t} outside [0, 1]")
    if t == 0.0:
        return eps * 1.0
    if t == 1.0:
        return x1 * 1.0
    return x1 * t + eps * (1.0 - t)


def target_vector_field(x1, eps) -> Tensor:
    """Constant transport direction of the straight path: x1 - eps."""
    x1, eps = as_tensor(x1), as_tensor(eps)
    _check_same_shape(x1, eps, "target_vector_field")
    return x1 - eps


def euler_step(x, v, dt: float) -> Tensor:
    """One explicit Euler update x + dt*v."""
    x, v = as_tensor(x), as_tensor(v)
    _check_same_shape(x, v, "euler_step")
    if dt <= 0:
        raise ValueError("dt must be positive")
    return x + v * dt


def integrate_field(
    field: Callable[[np.ndarray, float], np.ndarray],
    x0: np.ndarray,
    steps: int,
    time_of: Callable[[int], float],
) -> np.ndarray:
    """Euler integration in running-mean form (see module docstring).

    ``field(x, t)`` returns the field value as an array; ``time_of(j)`` maps
    a step index to its time coordinate (j/steps for full sampling, j*d_t
    for partial rollouts). Raises NonFiniteError naming the failing step.
    """
    x = np.array(x0, dtype=np.float64)
    mean_v = np.zeros_like(x)
    for k in range(steps):
        try:
            v = field(x, time_of(k))
        except NonFiniteError as exc:
            raise NonFiniteError(f"non-finite field value at step {k}") from exc
        mean_v = mean_v + (v - mean_v) / (k + 1)
        x = x0 + time_of(k + 1) * mean_v
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite state after step {k}")
    return x


def sample(
    net: ControlledVectorFieldNet,
    x0=None,
    cond=None,
    cfg: SamplerConfig | None = None,
    rng_seed: int | None = None,
) -> Tensor:
    """Integrate the guided field from t=0 to t=1 in cfg.steps Euler steps.

    Each step evaluates the net twice in a fixed order (unconditional first,
    then conditional) and combines the predictions as
    v = v_uncond + g * (v_cond - v_uncond). The degenerate scales g=1 and
    g=0 return the conditional / unconditional branch untouched, so those
    runs are bitwise identical to single-branch integration.
    """
    cfg = cfg or SamplerConfig()
    if cond is None:
        raise ValueError("sample requires a conditioning tensor")
    cond_t = as_tensor(cond).detach()
    if x0 is None:
        if rng_seed is None:
            raise ValueError("sample needs x0 or rng_seed")
        rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), 0x5A]))
        start = rng.standard_normal(cond_t.data.shape)
    else:
        start = np.array(as_tensor(x0).data, dtype=np.float64)

    null_cond = Tensor(np.zeros_like(cond_t.data))
    g = cfg.guidance_scale

    def guided(x: np.ndarray, t: float) -> np.ndarray:
        xt = Tensor(x)
        v_uncond = net.forward(xt, t, null_cond, uncond_flag=True)
        v_cond = net.forward(xt, t, cond_t, uncond_flag=False)
        if g == 1.0:
            return v_cond.data
        if g == 0.0:
            return v_uncond.data
        return v_uncond.data + (v_cond.data - v_uncond.data) * g

    out = integrate_field(guided, start, cfg.steps, lambda j: j / cfg.steps)
    return Tensor(out)


def frozen_rollout(
    net_frozen: ControlledVectorFieldNet,
    x0,
    cond,
    s: float,
    d_t: float,
) -> Tensor:
    """Integrate the conditional field from t=0 to t=s under frozen weights.

    s must sit on the d_t grid; the result carries no gradient linkage to
    any parameter.
    """
    if not net_frozen.frozen:
        raise ValueError("frozen_rollout requires a fully frozen network")
    steps = grid_index_of(s, d_t)
    cond_t = as_tensor(cond).detach()
    start = np.array(as_tensor(x0).data, dtype=np.float64)

    def conditional(x: np.ndarray, t: float) -> np.ndarray:
        return net_frozen.forward(Tensor(x), t, cond_t, uncond_flag=False).data

    out = integrate_field(conditional, start, steps, lambda j: j * d_t)
    return Tensor(out)


def tunable_jump(
    net: ControlledVectorFieldNet,
    x_s,
    s: float,
    cond,
) -> Tensor:
    """Single denoising step to the predicted clean sample.

    Returns x_s + (1-s) * v(x_s, s, cond); the lone net evaluation is the
    only place gradient reaches trainable parameters.
    """
    if not (0.0 <= s < 1.0):
        raise ValueError(f"jump start time {s} must lie in [0, 1)")
    x_s = as_tensor(x_s).detach()
    v = net.forward(x_s, s, cond, uncond_flag=False)
    return x_s + v * (1.0 - s)
