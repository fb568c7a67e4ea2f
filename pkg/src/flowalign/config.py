"""Hyperparameter dataclasses for training, sampling, rewards, and mask cleanup.

Defaults are desk scale: small nets, short runs, 16x16 images. The reference
settings from large-scale runs (learning rate 1e-5, kernel dimension 1280,
4000/500 iterations) stay reachable through the same fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-3  # reference value 1e-5 targets billion-parameter nets
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 4

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class SamplerConfig:
    steps: int = 28
    guidance_scale: float = 7.0
    d_t: float = 1.0 / 20.0  # rollout stride; the grid has 20 cells

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.guidance_scale < 0:
            raise ValueError("guidance_scale must be >= 0")
        if not (0 < self.d_t <= 1):
            raise ValueError("d_t must lie in (0, 1]")
        if abs(self.d_t * round(1.0 / self.d_t) - 1.0) > 1e-12:
            raise ValueError("d_t must tile [0, 1] exactly")


@dataclass
class KernelConfig:
    """Polynomial kernel (<x, y> / dim_scale + c) ** degree."""

    c: float = 1.0
    degree: int = 3
    dim_scale: int = 64  # matches the extractor's output width; 1280 at reference scale

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.dim_scale < 1:
            raise ValueError("dim_scale must be >= 1")


@dataclass
class TrainConfig:
    base_iters: int = 500
    stage1_iters: int = 2000  # reference value 4000
    stage2_iters: int = 300  # reference value 500
    w_align: float = 1.0
    t_s_index: int = 18
    d_t: float = 1.0 / 20.0
    cond_dropout_prob: float = 0.5
    reward_kind: str = "mmd"  # or "skl"
    seed: int = 0
    log_every: int = 10
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)

    def __post_init__(self):
        if not (0 <= self.t_s_index <= 19):
            raise ValueError("t_s_index must lie in [0, 19]")
        if self.w_align < 0:
            raise ValueError("w_align must be >= 0")
        if not (0 <= self.cond_dropout_prob <= 1):
            raise ValueError("cond_dropout_prob must lie in [0, 1]")
        if self.reward_kind not in ("mmd", "skl"):
            raise ValueError(f"unknown reward_kind {self.reward_kind!r}")
        if abs(self.d_t * round(1.0 / self.d_t) - 1.0) > 1e-12:
            raise ValueError("d_t must tile [0, 1] exactly")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


@dataclass
class MaskPipelineConfig:
    threshold: float = 0.5
    blur_sigma: float = 1.0
    blur_kernel: int = 5
    structuring_element: int = 3  # square side
    candidates: int = 4  # synthetic masks drawn per real mask

    def __post_init__(self):
        if not (0 < self.threshold < 1):
            raise ValueError("threshold must lie in (0, 1)")
        if self.blur_kernel % 2 == 0:
            raise ValueError("blur_kernel must be odd")
        if self.blur_sigma <= 0:
            raise ValueError("blur_sigma must be positive")
        if self.structuring_element % 2 == 0:
            raise ValueError("structuring_element side must be odd")
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")


def _build(cls, data: dict, path: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ValueError(f"unknown config key {path}.{key}")
        sub = {
            "optimizer": OptimizerConfig,
            "kernel": KernelConfig,
        }.get(key)
        if sub is not None:
            if not isinstance(value, dict):
                raise ValueError(f"{path}.{key} must be an object")
            kwargs[key] = _build(sub, value, f"{path}.{key}")
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> dict:
    """Parse a config mapping with sections train/sampler/mask_pipeline.

    Unknown keys at any level are a hard error so hyperparameter typos
    cannot silently fall back to defaults.
    """
    if not isinstance(data, dict):
        raise ValueError("config root must be an object")
    sections = {"train": TrainConfig, "sampler": SamplerConfig, "mask_pipeline": MaskPipelineConfig}
    out = {}
    for key, value in data.items():
        if key not in sections:
            raise ValueError(f"unknown config section {key!r}")
        if not isinstance(value, dict):
            raise ValueError(f"config section {key!r} must be an object")
        out[key] = _build(sections[key], value, key)
    for key, cls in sections.items():
        out.setdefault(key, cls())
    return out


def grid_index_of(s: float, d_t: float, tol: float = 1e-9) -> int:
    """Index of s on the d_t grid; raises if s is not a grid point."""
    j = round(s / d_t)
    if abs(j * d_t - s) > tol:
        raise ValueError(f"time {s} is not a multiple of d_t={d_t}")
    return int(j)


def grid_cells(d_t: float) -> int:
    return int(round(1.0 / d_t))


def is_on_grid(s: float, d_t: float, tol: float = 1e-9) -> bool:
    return abs(round(s / d_t) * d_t - s) <= tol
