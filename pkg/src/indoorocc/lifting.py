"""
Camera-to-voxel feature lifting with depth-probability weighting.

Every voxel centroid is projected once at full image resolution. Each scale k
of the feature pyramid is sampled at (u/k, v/k); the voxel's depth weight for
that scale is the probability, at the same image location, of the depth bin
its camera-frame z falls into. The fused volume is

    out[voxel] = sum over k of weight_k[voxel] * feature_k[voxel]

Voxels behind the camera or outside the image get the zero vector.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .camera import CameraModel, in_fov, project
from .depthbin import DepthBinSpec, bin_index
from .errors import DomainError
from .voxel import GridSpec, centroids

log = logging.getLogger(__name__)

SCALES = (1, 2, 4, 8)
MODES = ("nearest", "bilinear")
# voxels per work item when fusing; keeps per-chunk temporaries cache sized
CHUNK_VOXELS = 16384


@dataclass(frozen=True, eq=False)
class FeaturePyramid:
    """2D feature maps keyed by downsampling factor, each shaped (C, H/k, W/k)."""

    levels: Mapping[int, np.ndarray]
    height: int
    width: int

    def __post_init__(self):
        if not self.levels:
            raise DomainError("feature pyramid needs at least one level")
        if self.height % 8 or self.width % 8:
            raise DomainError(f"image extents {self.height}x{self.width} must be divisible by 8")
        levels = {}
        channels = None
        for k in sorted(self.levels):
            if k not in SCALES:
                raise DomainError(f"unsupported scale {k}; expected one of {SCALES}")
            arr = np.asarray(self.levels[k])
            if arr.ndim != 3:
                raise DomainError(f"level {k} must be (C, H, W), got {arr.shape}")
            if arr.shape[1:] != (self.height // k, self.width // k):
                raise DomainError(
                    f"level {k} has extents {arr.shape[1:]}, expected {(self.height // k, self.width // k)}"
                )
            if channels is None:
                channels = arr.shape[0]
            elif arr.shape[0] != channels:
                raise DomainError(f"level {k} has {arr.shape[0]} channels, expected {channels}")
            levels[k] = np.ascontiguousarray(arr, dtype=np.float32)
        object.__setattr__(self, "levels", levels)

    @property
    def channels(self) -> int:
        return next(iter(self.levels.values())).shape[0]

    @property
    def scales(self) -> tuple[int, ...]:
        return tuple(self.levels)

    @classmethod
    def from_levels(cls, levels: Mapping[int, np.ndarray]) -> "FeaturePyramid":
        k = min(levels)
        _, h, w = np.asarray(levels[k]).shape
        return cls(dict(levels), h * k, w * k)


@dataclass(frozen=True, eq=False)
class VoxelProjection:
    """Per-voxel full-resolution pixel coordinates, camera depth and validity, each (X, Y, Z)."""

    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        valid = np.asarray(self.valid, dtype=bool)
        for name in ("u", "v", "z"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != valid.shape:
                raise DomainError(f"{name} has shape {arr.shape}, expected {valid.shape}")
            if name != "z":
                arr = np.where(valid, arr, 0.0)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.valid.shape

    def valid_fraction(self) -> float:
        return float(self.valid.mean())


def project_voxels(cam: CameraModel, spec: GridSpec) -> VoxelProjection:
    pd = project(cam, centroids(spec))
    return VoxelProjection(pd.u, pd.v, pd.z, in_fov(cam, pd))


def _nearest_index(coord: np.ndarray, scale: int, size: int) -> np.ndarray:
    # np.rint rounds half to even; clamp catches u/k rounding up to the border
    return np.clip(np.rint(coord / scale), 0, size - 1).astype(np.intp)


def _bilinear_taps(coord: np.ndarray, scale: int, size: int):
    c = coord / scale
    c0 = np.floor(c)
    w1 = c - c0
    i0 = np.clip(c0, 0, size - 1).astype(np.intp)
    i1 = np.clip(c0 + 1, 0, size - 1).astype(np.intp)
    return i0, i1, w1


def _sample_plane(plane: np.ndarray, u: np.ndarray, v: np.ndarray, scale: int, mode: str) -> np.ndarray:
    """Sample a (..., H, W) array at flat voxel coordinates; returns (..., n)."""
    H, W = plane.shape[-2:]
    flat = plane.reshape(plane.shape[:-2] + (H * W,))
    if mode == "nearest":
        col = _nearest_index(u, scale, W)
        row = _nearest_index(v, scale, H)
        return np.take(flat, row * W + col, axis=-1)
    if mode == "bilinear":
        c0, c1, wx = _bilinear_taps(u, scale, W)
        r0, r1, wy = _bilinear_taps(v, scale, H)
        wx = wx.astype(plane.dtype)
        wy = wy.astype(plane.dtype)
        top = np.take(flat, r0 * W + c0, axis=-1) * (1 - wx) + np.take(flat, r0 * W + c1, axis=-1) * wx
        bot = np.take(flat, r1 * W + c0, axis=-1) * (1 - wx) + np.take(flat, r1 * W + c1, axis=-1) * wx
        return top * (1 - wy) + bot * wy
    raise DomainError(f"unknown sampling mode {mode!r}; expected one of {MODES}")


def sample_features(level: np.ndarray, proj: VoxelProjection, scale: int = 1, mode: str = "nearest") -> np.ndarray:
    """Per-voxel feature vectors, shape (X, Y, Z, C); invalid voxels are zero."""
    level = np.asarray(level, dtype=np.float32)
    valid = proj.valid.reshape(-1)
    cols = _sample_plane(level, proj.u.reshape(-1), proj.v.reshape(-1), scale, mode)
    cols[:, ~valid] = 0.0
    return cols.T.reshape(proj.shape + (level.shape[0],))


def sample_depth_weights(
    dist: np.ndarray, proj: VoxelProjection, spec: DepthBinSpec, scale: int = 1, mode: str = "nearest"
) -> np.ndarray:
    """Probability of each voxel's own depth bin at its image location, shape (X, Y, Z)."""
    dist = np.asarray(dist, dtype=np.float32)
    if dist.ndim != 3 or dist.shape[0] != spec.n_bins:
        raise DomainError(f"distribution shape {dist.shape} does not match {spec.n_bins} bins")
    return _depth_weights_flat(dist, proj.u.reshape(-1), proj.v.reshape(-1), proj.z.reshape(-1),
                               proj.valid.reshape(-1), spec, scale, mode).reshape(proj.shape)


def _depth_weights_flat(dist, u, v, z, valid, spec, scale, mode):
    n_bins, H, W = dist.shape
    bins = bin_index(spec, np.where(valid, z, spec.d_min))
    if mode == "nearest":
        col = _nearest_index(u, scale, W)
        row = _nearest_index(v, scale, H)
        w = dist.reshape(-1)[(bins * H + row) * W + col]
    else:
        # sample only the plane of each voxel's own bin
        flat = dist.reshape(n_bins, H * W)
        c0, c1, wx = _bilinear_taps(u, scale, W)
        r0, r1, wy = _bilinear_taps(v, scale, H)
        wx = wx.astype(np.float32)
        wy = wy.astype(np.float32)
        take = lambda r, c: flat[bins, r * W + c]
        w = (take(r0, c0) * (1 - wx) + take(r0, c1) * wx) * (1 - wy) + (
            take(r1, c0) * (1 - wx) + take(r1, c1) * wx
        ) * wy
    return np.where(valid, w, np.float32(0.0)).astype(np.float32)


def _check_inputs(features: FeaturePyramid, dists: Mapping[int, np.ndarray], spec: DepthBinSpec, mode: str):
    if mode not in MODES:
        raise DomainError(f"unknown sampling mode {mode!r}; expected one of {MODES}")
    out = {}
    for k, level in features.levels.items():
        if k not in dists:
            raise DomainError(f"missing depth distribution for scale {k}")
        d = np.ascontiguousarray(dists[k], dtype=np.float32)
        if d.shape != (spec.n_bins,) + level.shape[1:]:
            raise DomainError(
                f"scale {k}: distribution {d.shape} does not match ({spec.n_bins},) + {level.shape[1:]}"
            )
        out[k] = d
    return out


def fuse(
    features: FeaturePyramid | Mapping[int, np.ndarray],
    dists: Mapping[int, np.ndarray],
    proj: VoxelProjection,
    spec: DepthBinSpec,
    mode: str = "nearest",
    threads: int = 1,
) -> np.ndarray:
    """Depth-weighted multi-scale feature volume of shape (X, Y, Z, C), float32.

    Scales are accumulated in ascending order with float32 arithmetic. Work is
    split into contiguous voxel ranges; each range writes a disjoint slice of
    the output, so the result does not depend on ``threads``.
    """
    if not isinstance(features, FeaturePyramid):
        features = FeaturePyramid.from_levels(features)
    dists = _check_inputs(features, dists, spec, mode)
    C = features.channels
    n = int(np.prod(proj.shape))
    u = proj.u.reshape(-1)
    v = proj.v.reshape(-1)
    z = proj.z.reshape(-1)
    valid = proj.valid.reshape(-1)
    out = np.zeros((n, C), dtype=np.float32)

    def work(lo: int, hi: int) -> None:
        ok = valid[lo:hi]
        acc = np.zeros((C, hi - lo), dtype=np.float32)
        for k in features.scales:
            w = _depth_weights_flat(dists[k], u[lo:hi], v[lo:hi], z[lo:hi], ok, spec, k, mode)
            f = _sample_plane(features.levels[k], u[lo:hi], v[lo:hi], k, mode)
            acc += f * w
        acc[:, ~ok] = 0.0
        out[lo:hi] = acc.T

    ranges = [(lo, min(lo + CHUNK_VOXELS, n)) for lo in range(0, n, CHUNK_VOXELS)]
    if threads <= 1 or len(ranges) == 1:
        for lo, hi in ranges:
            work(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda r: work(*r), ranges))
    return out.reshape(proj.shape + (C,))


def lift(
    cam: CameraModel,
    grid: GridSpec,
    features: FeaturePyramid,
    dists: Mapping[int, np.ndarray],
    spec: DepthBinSpec,
    mode: str = "nearest",
    threads: int = 1,
) -> tuple[np.ndarray, VoxelProjection]:
    proj = project_voxels(cam, grid)
    log.debug("valid_fraction=%.6f", proj.valid_fraction())
    return fuse(features, dists, proj, spec, mode=mode, threads=threads), proj
