"""Mask synthesis: sample raw masks from an unconditional flow net, then clean.

Raw samples carry three kinds of defects: off-class gray values, ragged
edges, and isolated speckles. The cleanup runs blur -> threshold -> open ->
close (blurring the raw real-valued sample first keeps the thresholded
output binary through the rest of the pipeline). Per real mask, the best of
K cleaned candidates survives, ranked by cosine similarity of pooled
features against the real mask.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .config import MaskPipelineConfig, SamplerConfig
from .rewards import FeatureExtractor


def threshold_classes(img: np.ndarray, thr: float) -> np.ndarray:
    """Binarize: 1 where value >= thr (ties go to foreground), else 0."""
    img = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise ValueError("threshold_classes requires finite values")
    return (img >= thr).astype(np.float64)


def gaussian_kernel_1d(sigma: float, ksize: int) -> np.ndarray:
    if ksize % 2 == 0:
        raise ValueError("blur kernel size must be odd")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    r = ksize // 2
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float, ksize: int) -> np.ndarray:
    """Separable Gaussian with edge replication at the borders."""
    img = np.asarray(img, dtype=np.float64)
    k = gaussian_kernel_1d(sigma, ksize)
    r = ksize // 2
    padded = np.pad(img, ((0, 0), (r, r)), mode="edge")
    rows = sum(k[i] * padded[:, i : i + img.shape[1]] for i in range(ksize))
    padded = np.pad(rows, ((r, r), (0, 0)), mode="edge")
    return sum(k[i] * padded[i : i + img.shape[0], :] for i in range(ksize))


def _check_binary(mask: np.ndarray, op: str) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ValueError(f"{op} requires a binary mask")
    return mask


def _windows(padded: np.ndarray, shape: tuple[int, int], side: int) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(padded, (side, side))
    return view.reshape(shape[0], shape[1], side * side)


def erode(mask: np.ndarray, se_side: int) -> np.ndarray:
    """Flat square erosion; pixels beyond the border count as background."""
    mask = _check_binary(mask, "erode")
    r = se_side // 2
    padded = np.pad(mask, r, mode="constant", constant_values=0.0)
    return _windows(padded, mask.shape, se_side).min(axis=2)


def dilate(mask: np.ndarray, se_side: int) -> np.ndarray:
    """Flat square dilation; the border is edge-replicated (never creates
    foreground that a larger canvas would not have)."""
    mask = _check_binary(mask, "dilate")
    r = se_side // 2
    padded = np.pad(mask, r, mode="edge")
    return _windows(padded, mask.shape, se_side).max(axis=2)


def morph_open(mask: np.ndarray, se_side: int) -> np.ndarray:
    """Erode then dilate: removes foreground speckles smaller than the SE."""
    if se_side % 2 == 0:
        raise ValueError("structuring element side must be odd")
    return dilate(erode(mask, se_side), se_side)


def morph_close(mask: np.ndarray, se_side: int) -> np.ndarray:
    """Dilate then erode: fills background holes smaller than the SE."""
    if se_side % 2 == 0:
        raise ValueError("structuring element side must be odd")
    return erode(dilate(mask, se_side), se_side)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError("cosine_similarity requires equal-length vectors")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine_similarity undefined for zero-norm vectors")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def select_best_candidate(
    real_mask: np.ndarray, candidates: list[np.ndarray], extractor: FeatureExtractor
) -> tuple[int, np.ndarray]:
    """Candidate whose pooled features are most cosine-similar to the real
    mask's; ties break toward the lowest index."""
    if not candidates:
        raise ValueError("select_best_candidate needs at least one candidate")
    ref = extractor.extract([real_mask]).data[0]
    feats = extractor.extract(candidates).data
    sims = [cosine_similarity(ref, row) for row in feats]
    best = int(np.argmax(sims))
    return best, candidates[best]


def clean_mask(raw: np.ndarray, cfg: MaskPipelineConfig) -> np.ndarray:
    """blur -> threshold -> open -> close; output values are exactly {0, 1}."""
    smoothed = gaussian_blur(np.asarray(raw, dtype=np.float64), cfg.blur_sigma, cfg.blur_kernel)
    binary = threshold_classes(smoothed, cfg.threshold)
    opened = morph_open(binary, cfg.structuring_element)
    return morph_close(opened, cfg.structuring_element)


def synthesize_masks(
    mask_model,
    real_masks: list[np.ndarray],
    cfg: MaskPipelineConfig,
    seed: int,
    extractor: FeatureExtractor | None = None,
    sampler: SamplerConfig | None = None,
) -> list[np.ndarray]:
    """One cleaned, best-of-K synthetic mask per real mask.

    The mask model is an unconditional flow net (conditioning slot kept
    null), so candidates are drawn with the guidance collapsed to the
    unconditional branch. Per-mask derived seeds make the output identical
    whether masks are processed serially or in parallel.
    """
    from .flow import sample  # local import to avoid a cycle at module load

    side = real_masks[0].shape[0]
    extractor = extractor or FeatureExtractor(side=side)
    sampler = sampler or SamplerConfig(guidance_scale=0.0)
    out = []
    for i, real in enumerate(real_masks):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        null_cond = np.zeros((cfg.candidates, side * side))
        x0 = Tensor(rng.standard_normal((cfg.candidates, side * side)))
        raw = sample(mask_model, x0=x0, cond=null_cond, cfg=sampler).data
        candidates = [clean_mask(raw[k].reshape(side, side), cfg) for k in range(cfg.candidates)]
        if cfg.candidates == 1:
            out.append(candidates[0])
        else:
            _, best = select_best_candidate(np.asarray(real, dtype=np.float64), candidates, extractor)
            out.append(best)
    return out
