"""Distribution rewards over pooled image features.

A fixed, seeded convolutional extractor stands in for a large pretrained
embedding model: its weights are a deterministic function of the seed and
are never trained, but gradients flow through it back to the input pixels,
which is what lets the alignment loss steer the generator.

Two rewards compare a generated feature set against a reference feature set:

  * ``mmd_reward``: the negated unbiased squared maximum mean discrepancy
    under a polynomial kernel (diagonal terms excluded, so constant sets
    score exactly zero),
  * ``skl_reward``: the negated symmetric KL divergence between the two
    mean feature vectors after softmax normalization.

Both are largest (zero) when the distributions agree, and the alignment
loss is their negation. Reductions use exact summation, which makes row
permutation invariance and argument-swap symmetry hold bitwise.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, as_tensor, pairwise_dot, softmax_1d, stack_rows
from .config import KernelConfig

DEFAULT_FEATURE_SEED = 727
SKL_FLOOR = 1e-12


def _conv_indices(h: int, w: int, cin: int, k: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    """im2col index map into a flattened (cin, h, w) array; -1 marks zero pad."""
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    idx = np.full((oh * ow, cin * k * k), -1, dtype=np.int64)
    pos = 0
    for oy in range(oh):
        for ox in range(ow):
            col = 0
            for c in range(cin):
                for ky in range(k):
                    for kx in range(k):
                        iy = oy * stride + ky - pad
                        ix = ox * stride + kx - pad
                        if 0 <= iy < h and 0 <= ix < w:
                            idx[pos, col] = (c * h + iy) * w + ix
                        col += 1
            pos += 1
    return idx, oh, ow


class FeatureExtractor:
    """Two strided conv layers + global average pooling + linear head.

    All parameters are drawn once from the seed with N(0, 1/fan_in) and kept
    constant for the life of the extractor.
    """

    def __init__(self, side: int = 16, out_dim: int = 64, seed: int = DEFAULT_FEATURE_SEED):
        self.side = side
        self.out_dim = out_dim
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xFEA7]))
        c1, c2, k = 8, 16, 3
        self.channels = (1, c1, c2)
        self.idx1, oh1, ow1 = _conv_indices(side, side, 1, k, 2, 1)
        self.idx2, oh2, ow2 = _conv_indices(oh1, ow1, c1, k, 2, 1)
        self.spatial = (oh1 * ow1, oh2 * ow2)

        def draw(fan_in, shape):
            return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape))

        self.w1 = draw(k * k * 1, (k * k * 1, c1))
        self.b1 = draw(k * k * 1, (c1,))
        self.w2 = draw(k * k * c1, (k * k * c1, c2))
        self.b2 = draw(k * k * c1, (c2,))
        self.w_out = draw(c2, (c2, out_dim))
        self.b_out = draw(c2, (out_dim,))

    def _embed_one(self, img: Tensor) -> Tensor:
        x = img.reshape(-1)
        n1, n2 = self.spatial
        h1 = (x.gather(self.idx1) @ self.w1 + self.b1).silu()  # (n1, c1)
        x2 = h1.T.reshape(-1)  # channel-major layout for the next gather
        h2 = (x2.gather(self.idx2) @ self.w2 + self.b2).silu()  # (n2, c2)
        pooled = (Tensor(np.full((1, n2), 1.0 / n2)) @ h2).reshape(-1)  # GAP over positions
        return (pooled.reshape(1, -1) @ self.w_out + self.b_out).reshape(-1)

    def extract(self, images) -> Tensor:
        """Feature matrix, one row per image; differentiable w.r.t. pixels."""
        rows = []
        for img in images:
            img = as_tensor(img)
            if img.data.size != self.side * self.side:
                raise ValueError(
                    f"extractor expects {self.side}x{self.side} images, got shape {img.data.shape}"
                )
            rows.append(self._embed_one(img))
        if not rows:
            raise ValueError("empty image batch")
        return stack_rows(rows)


def extract_features(extractor: FeatureExtractor, images) -> Tensor:
    return extractor.extract(images)


def poly_kernel(x, y, cfg: KernelConfig) -> float:
    """Polynomial kernel (<x, y> / dim_scale + c) ** degree on plain vectors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"poly_kernel expects equal-length vectors, got {x.shape} and {y.shape}")
    return float((np.dot(x, y) / cfg.dim_scale + cfg.c) ** cfg.degree)


def _kernel_matrix(a: Tensor, b: Tensor, cfg: KernelConfig) -> Tensor:
    return (pairwise_dot(a, b) * (1.0 / cfg.dim_scale) + cfg.c) ** cfg.degree


def _offdiag_sum(k: Tensor) -> Tensor:
    n = k.data.shape[0]
    mask = 1.0 - np.eye(n)
    return (k * Tensor(mask)).sum_exact()


def mmd_reward(f_out, f_ref, cfg: KernelConfig | None = None) -> Tensor:
    """Negated unbiased squared MMD: zero for matching sets, below zero apart.

    Uses the diagonal-excluded estimator, so both sides need at least two
    rows. The three kernel sums are reduced with exact summation and
    combined in an argument-order-free way, making the value symmetric in
    its two inputs bitwise.
    """
    cfg = cfg or KernelConfig()
    f_out = as_tensor(f_out)
    f_ref = as_tensor(f_ref).detach()  # references are constants by contract
    m, n = f_out.data.shape[0], f_ref.data.shape[0]
    if m < 2 or n < 2:
        raise ValueError(f"unbiased estimate needs >= 2 rows per side, got {m} and {n}")

    cross = _kernel_matrix(f_out, f_ref, cfg).sum_exact() * (2.0 / (m * n))
    self_out = _offdiag_sum(_kernel_matrix(f_out, f_out, cfg)) * (1.0 / (m * (m - 1)))
    self_ref = _offdiag_sum(_kernel_matrix(f_ref, f_ref, cfg)) * (1.0 / (n * (n - 1)))
    return cross - (self_out + self_ref)


def skl_reward(f_out, f_ref) -> Tensor:
    """Negated symmetric KL between softmax-normalized mean feature vectors.

    Column means become probability vectors through a softmax (floored at
    1e-12 before the logs); the reward is -(KL(p||q) + KL(q||p)) / 2, which
    is zero exactly when the mean features agree.
    """
    f_out = as_tensor(f_out)
    f_ref = as_tensor(f_ref).detach()
    if f_out.data.size == 0 or f_ref.data.size == 0:
        raise ValueError("skl_reward requires nonempty feature matrices")
    if f_out.data.shape[1] != f_ref.data.shape[1]:
        raise ValueError("feature widths differ")

    p = softmax_1d(f_out.mean_rows_exact()).clamp_min(SKL_FLOOR)
    q = softmax_1d(f_ref.mean_rows_exact()).clamp_min(SKL_FLOOR)
    kl_pq = (p * (p.log() - q.log())).sum_exact()
    kl_qp = (q * (q.log() - p.log())).sum_exact()
    return (kl_pq + kl_qp) * -0.5


def alignment_loss(f_out, f_ref, kind: str = "mmd", kernel: KernelConfig | None = None) -> Tensor:
    """Negative alignment reward; differentiable w.r.t. the generated features."""
    if kind == "mmd":
        reward = mmd_reward(f_out, f_ref, kernel)
    elif kind == "skl":
        reward = skl_reward(f_out, f_ref)
    else:
        raise ValueError(f"unknown reward kind {kind!r}")
    return -reward
