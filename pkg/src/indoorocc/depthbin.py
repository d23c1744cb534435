"""
Linear-increasing depth discretization and the depth supervision loss.

Bin i spans [d_min + delta*i(i+1)/2, d_min + delta*(i+1)(i+2)/2), so widths
grow as (i+1)*delta and the N bins exactly tile [d_min, d_max].

Distributions are arrays of shape (n_bins, H, W); depth maps are (H, W) with
values <= 0 (or non-finite) marking missing depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

BCE_EPS = 1e-7

# Configuration defaults only; the values used for training are not published.
DEFAULT_D_MIN = 0.2
DEFAULT_D_MAX = 10.0
DEFAULT_N_BINS = 64


@dataclass(frozen=True)
class DepthBinSpec:
    d_min: float
    d_max: float
    n_bins: int

    def __post_init__(self):
        if not (np.isfinite(self.d_min) and np.isfinite(self.d_max)):
            raise DomainError("depth range must be finite")
        if not self.d_min < self.d_max:
            raise DomainError(f"need d_min < d_max, got {self.d_min} >= {self.d_max}")
        if int(self.n_bins) != self.n_bins or self.n_bins < 1:
            raise DomainError(f"n_bins must be a positive integer, got {self.n_bins}")
        object.__setattr__(self, "d_min", float(self.d_min))
        object.__setattr__(self, "d_max", float(self.d_max))
        object.__setattr__(self, "n_bins", int(self.n_bins))

    @property
    def delta(self) -> float:
        n = self.n_bins
        return 2.0 * (self.d_max - self.d_min) / (n * (1 + n))


def bin_edges(spec: DepthBinSpec) -> np.ndarray:
    i = np.arange(spec.n_bins + 1, dtype=np.float64)
    edges = spec.d_min + spec.delta * (i * (i + 1) / 2.0)
    edges[0] = spec.d_min
    edges[-1] = spec.d_max
    return edges


def bin_centers(spec: DepthBinSpec) -> np.ndarray:
    e = bin_edges(spec)
    return 0.5 * (e[:-1] + e[1:])


def continuous_index(spec: DepthBinSpec, d):
    """Fractional bin coordinate of depth ``d``; 0 at d_min, n_bins at d_max.

    Below d_min - delta/8 the square-root argument turns negative; the odd
    extension sign(a)*sqrt(|a|) keeps the map monotone and finite there.
    """
    d = np.asarray(d, dtype=np.float64)
    a = 1.0 + 8.0 * (d - spec.d_min) / spec.delta
    l = -0.5 + 0.5 * np.sign(a) * np.sqrt(np.abs(a))
    return float(l) if l.ndim == 0 else l


def bin_index(spec: DepthBinSpec, d):
    """Integer bin of ``d``: floor of the continuous index, clamped to [0, n_bins-1].

    The floor is reconciled against ``bin_edges`` so that a depth sitting on an
    edge always lands in the upper bin (half-open bins), whatever the rounding
    of the square root.
    """
    d = np.asarray(d, dtype=np.float64)
    edges = bin_edges(spec)
    n = spec.n_bins
    b = np.floor(continuous_index(spec, d))
    b = np.clip(np.nan_to_num(b, nan=0.0), 0, n - 1).astype(np.int64)
    b = np.where((b < n - 1) & (d >= edges[np.minimum(b + 1, n)]), b + 1, b)
    b = np.where((b > 0) & (d < edges[b]), b - 1, b)
    return int(b) if b.ndim == 0 else b


def valid_depth(depth: np.ndarray) -> np.ndarray:
    depth = np.asarray(depth)
    return np.isfinite(depth) & (depth > 0)


def one_hot_target(depth: np.ndarray, spec: DepthBinSpec) -> tuple[np.ndarray, np.ndarray]:
    """One-hot (n_bins, H, W) float32 target and the (H, W) validity mask."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise DomainError(f"depth map must be (H, W), got {depth.shape}")
    mask = valid_depth(depth)
    idx = bin_index(spec, np.where(mask, depth, spec.d_min))
    target = (np.arange(spec.n_bins)[:, None, None] == idx[None]) & mask[None]
    return target.astype(np.float32), mask


def check_distribution(dist: np.ndarray, tol: float = 1e-5) -> None:
    dist = np.asarray(dist)
    if dist.ndim != 3:
        raise DomainError(f"distribution must be (n_bins, H, W), got {dist.shape}")
    if not np.isfinite(dist).all() or dist.min() < 0 or dist.max() > 1:
        raise DomainError("probabilities must lie in [0, 1]")
    sums = dist.sum(axis=0, dtype=np.float64)
    if np.abs(sums - 1.0).max() > tol:
        raise DomainError("per-pixel probabilities do not sum to 1")


def downsample_distribution(dist: np.ndarray, factor: int) -> np.ndarray:
    """Mean-pool each bin over factor x factor pixel blocks."""
    dist = np.asarray(dist)
    if dist.ndim != 3:
        raise DomainError(f"distribution must be (n_bins, H, W), got {dist.shape}")
    if int(factor) != factor or factor < 1:
        raise DomainError("factor must be a positive integer")
    n, H, W = dist.shape
    if H % factor or W % factor:
        raise DomainError(f"extents {H}x{W} not divisible by {factor}")
    if factor == 1:
        return dist.copy()
    blocks = dist.reshape(n, H // factor, factor, W // factor, factor).astype(np.float64)
    out = blocks.mean(axis=(2, 4))
    return out.astype(dist.dtype if dist.dtype.kind == "f" else np.float32)


def _loss_terms(pred, target, mask):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 3:
        raise DomainError(f"pred {pred.shape} and target {target.shape} must match as (n_bins, H, W)")
    if mask is None:
        mask = np.ones(pred.shape[1:], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != pred.shape[1:]:
        raise DomainError(f"mask {mask.shape} does not match spatial extents {pred.shape[1:]}")
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    norm = pred.shape[0] * int(mask.sum())
    return p, target, mask, norm


def bce_depth_loss(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean binary cross-entropy over unmasked pixel-bin terms.

    Masked pixels neither contribute nor count in the normaliser. Returns 0.0
    when every pixel is masked.
    """
    p, t, mask, norm = _loss_terms(pred, target, mask)
    if norm == 0:
        return 0.0
    terms = t * np.log(p) + (1.0 - t) * np.log1p(-p)
    # contiguous 1-D sum: numpy's pairwise reduction, fixed order
    selected = np.ascontiguousarray(terms[:, mask].reshape(-1))
    return float(-selected.sum() / norm)


def bce_depth_loss_grad(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """d(loss)/d(pred), evaluated at the clamped probabilities; zero where masked."""
    p, t, mask, norm = _loss_terms(pred, target, mask)
    grad = np.zeros_like(p)
    if norm == 0:
        return grad
    g = ((1.0 - t) / (1.0 - p) - t / p) / norm
    grad[:, mask] = g[:, mask]
    return grad
