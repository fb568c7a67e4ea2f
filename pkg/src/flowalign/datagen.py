"""Deterministic synthetic two-domain corpus: ellipse masks + styled images.

Each sample is a random ellipse mask and an image that paints foreground
and background at domain-specific gray levels, with optional Gaussian noise
and a sinusoidal texture. The two built-in domains are deliberately far
apart in feature space (brightness shift plus texture) so that distribution
alignment between them is measurable at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pgm import read_dir, write_indexed

TEXTURE_AMPLITUDE = 0.05  # kept below the distance from background to the 0.5 threshold


@dataclass
class DomainSpec:
    name: str
    background_level: float
    foreground_level: float
    noise_std: float
    texture_period: int = 0  # 0 disables the texture

    def __post_init__(self):
        if not (0 <= self.background_level <= 1 and 0 <= self.foreground_level <= 1):
            raise ValueError("gray levels must lie in [0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


# the target background stays below the 0.5 mask threshold even at texture
# peaks: images in the target style must threshold cleanly back to their masks
SOURCE_DOMAIN = DomainSpec("source", background_level=0.2, foreground_level=0.8, noise_std=0.05)
TARGET_DOMAIN = DomainSpec(
    "target", background_level=0.42, foreground_level=0.95, noise_std=0.015, texture_period=2
)

BUILTIN_DOMAINS = {"source": SOURCE_DOMAIN, "target": TARGET_DOMAIN}


def _ellipse_mask(rng, size: int) -> np.ndarray:
    cx = rng.uniform(0.3, 0.7) * size
    cy = rng.uniform(0.3, 0.7) * size
    rx = rng.uniform(0.15, 0.35) * size
    ry = rng.uniform(0.15, 0.35) * size
    ys, xs = np.mgrid[0:size, 0:size]
    inside = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
    return inside.astype(np.float64)


def gen_sample(spec: DomainSpec, size: int, seed_seq) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed_seq)
    mask = _ellipse_mask(rng, size)
    img = np.where(mask == 1.0, spec.foreground_level, spec.background_level)
    if spec.noise_std > 0:
        img = img + rng.normal(0.0, spec.noise_std, size=(size, size))
    if spec.texture_period > 0:
        xs = np.arange(size)
        wave = np.sin(2.0 * np.pi * (xs[None, :] + xs[:, None]) / spec.texture_period)
        img = img + TEXTURE_AMPLITUDE * wave
    return np.clip(img, 0.0, 1.0), mask


def gen_dataset(
    spec: DomainSpec, n: int, size: int, seed: int
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """n image/mask pairs; per-sample derived seeds keep generation order-free."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if size < 8:
        raise ValueError("size must be >= 8")
    images, masks = [], []
    for i in range(n):
        img, mask = gen_sample(spec, size, np.random.SeedSequence([seed, i]))
        images.append(img)
        masks.append(mask)
    return images, masks


def write_dataset(root, images, masks) -> None:
    root = Path(root)
    write_indexed(root / "images", images)
    write_indexed(root / "masks", masks)


def load_dataset(root) -> tuple[list[np.ndarray], list[np.ndarray]]:
    root = Path(root)
    images = read_dir(root / "images")
    masks = read_dir(root / "masks")
    if len(images) != len(masks):
        raise ValueError(f"{root}: {len(images)} images but {len(masks)} masks")
    return images, masks
