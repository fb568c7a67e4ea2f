"""AdamW with decoupled weight decay, acting on the trainable half of a ParamSet."""

from __future__ import annotations

import numpy as np

from .config import OptimizerConfig
from .nets import ParamSet


class AdamW:
    """Decoupled-decay Adam: decay shrinks weights directly, not the gradient."""

    def __init__(self, params: ParamSet, cfg: OptimizerConfig):
        self.params = params
        self.cfg = cfg
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        for name, p in params.trainable_items():
            self.m[name] = np.zeros_like(p.data)
            self.v[name] = np.zeros_like(p.data)

    def step(self, grads: dict[str, np.ndarray]) -> ParamSet:
        cfg = self.cfg
        self.params.step += 1
        t = self.params.step
        bias1 = 1.0 - cfg.beta1**t
        bias2 = 1.0 - cfg.beta2**t
        for name, p in self.params.items():
            if not p.requires_grad:
                continue  # frozen tensors are never touched
            if name not in grads:
                raise KeyError(f"missing gradient for trainable parameter {name!r}")
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            m_hat = m / bias1
            v_hat = v / bias2
            if cfg.weight_decay != 0.0:
                p.data *= 1.0 - cfg.learning_rate * cfg.weight_decay
            p.data -= cfg.learning_rate * (m_hat / (np.sqrt(v_hat) + cfg.epsilon))
        return self.params

    def state_items(self) -> list[tuple[str, np.ndarray]]:
        """Flat view of optimizer state for checkpointing."""
        out: list[tuple[str, np.ndarray]] = [("step", np.array([float(self.params.step)]))]
        for name in sorted(self.m):
            out.append((f"m/{name}", self.m[name]))
            out.append((f"v/{name}", self.v[name]))
        return out

    def load_state(self, items: dict[str, np.ndarray]) -> None:
        self.params.step = int(items["step"][0])
        for name in self.m:
            self.m[name] = np.array(items[f"m/{name}"], dtype=np.float64).reshape(self.m[name].shape)
            self.v[name] = np.array(items[f"v/{name}"], dtype=np.float64).reshape(self.v[name].shape)


def collect_grads(loss, named_params: list[tuple[str, "object"]]) -> dict[str, np.ndarray]:
    """Run backward on a scalar loss and map parameter names to gradients.

    Frozen or unreachable parameters get no entry. Gradients are cleared on
    the parameter tensors afterwards so steps never leak into each other.
    """
    loss.backward()
    grads: dict[str, np.ndarray] = {}
    for name, p in named_params:
        if p.requires_grad and p.grad is not None:
            grads[name] = p.grad
            p.grad = None
    return grads
