"""Distribution-shift metrics over pooled features, plus pixel-level checks.

The feature-space metrics quantify how far a generated image set sits from a
reference set: a kernel two-sample distance (the positive counterpart of the
training reward) and a Gaussian-fit Fréchet distance. Pixel-level helpers
score reconstruction quality (PSNR) and structural agreement between a
generated image and its conditioning mask (IoU after thresholding). A small
PCA embedder exports 2-D coordinates for distribution scatter plots.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import as_tensor
from .config import KernelConfig
from .masksynth import threshold_classes
from .rewards import mmd_reward

COV_REGULARIZER = 1e-6  # keeps small-sample covariances invertible


def eval_mmd(gen_features, ref_features, kernel: KernelConfig | None = None) -> float:
    """Unbiased squared kernel discrepancy, reported as a distance (>= 0 in
    expectation, exactly the negated training reward)."""
    gen = as_tensor(gen_features).detach()
    ref = as_tensor(ref_features).detach()
    return -mmd_reward(gen, ref, kernel).item()


def _gaussian_fit(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = features.mean(axis=0)
    centered = features - mu
    n = features.shape[0]
    if n < 2:
        raise ValueError("need at least 2 rows to fit a covariance")
    cov = centered.T @ centered / (n - 1)
    return mu, cov + COV_REGULARIZER * np.eye(features.shape[1])


def _sqrtm_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Symmetric square root of the symmetrized product (a @ b + b @ a) / 2."""
    prod = a @ b
    sym = (prod + prod.T) / 2.0
    try:
        vals, vecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise ValueError("eigendecomposition did not converge") from exc
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def mini_frechet(gen_features, ref_features) -> float:
    """Fréchet distance between Gaussians fitted to the two feature sets.

    ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), with the matrix root
    taken through a symmetric eigendecomposition of the symmetrized product.
    """
    gen = np.asarray(as_tensor(gen_features).data, dtype=np.float64)
    ref = np.asarray(as_tensor(ref_features).data, dtype=np.float64)
    mu1, s1 = _gaussian_fit(gen)
    mu2, s2 = _gaussian_fit(ref)
    diff = mu1 - mu2
    root = _sqrtm_product(s1, s2)
    return float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * np.trace(root))


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; identical inputs report infinity."""
    a = np.asarray(as_tensor(a).data, dtype=np.float64)
    b = np.asarray(as_tensor(b).data, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def pca_embed_2d(features) -> np.ndarray:
    """Project rows onto the top-2 principal axes.

    Columns are centered first; axes come in descending eigenvalue order and
    each axis is sign-fixed so its largest-magnitude loading is positive.
    Data whose centered rank is below 2 is rejected.
    """
    feats = np.asarray(as_tensor(features).data, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 3:
        raise ValueError("pca_embed_2d needs a matrix with at least 3 rows")
    centered = feats - feats.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    if len(svals) < 2 or svals[1] <= 1e-10 * max(svals[0], 1e-30):
        raise ValueError("rank < 2 after centering")
    axes = vt[:2]
    for i in range(2):
        j = int(np.argmax(np.abs(axes[i])))
        if axes[i, j] < 0:
            axes[i] = -axes[i]
    return centered @ axes.T


def mask_agreement_iou(generated_image, cond_mask, thr: float = 0.5) -> float:
    """IoU between the thresholded generation and its conditioning mask.

    Empty-vs-empty counts as perfect agreement (both say nothing is there).
    """
    img = np.asarray(as_tensor(generated_image).data, dtype=np.float64)
    mask = np.asarray(as_tensor(cond_mask).data, dtype=np.float64)
    if img.shape != mask.shape:
        raise ValueError(f"iou: shape mismatch {img.shape} vs {mask.shape}")
    pred = threshold_classes(img, thr)
    inter = float(np.sum((pred == 1.0) & (mask == 1.0)))
    union = float(np.sum((pred == 1.0) | (mask == 1.0)))
    if union == 0.0:
        return 1.0
    return inter / union


def write_metrics_csv(path, metrics: dict[str, float]) -> None:
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("metric,value\n")
        for name, value in metrics.items():
            rendered = "inf" if math.isinf(value) else repr(float(value))
            fh.write(f"{name},{rendered}\n")


def write_embeddings_csv(path, labeled_coords: list[tuple[str, np.ndarray]]) -> None:
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("set_label,x,y\n")
        for label, coords in labeled_coords:
            for x, y in np.asarray(coords):
                fh.write(f"{label},{float(x)!r},{float(y)!r}\n")
