"""Voxel grid geometry, semantic label grids and label downsampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

FREE = 0
UNKNOWN = 255
CLASS_NAMES = (
    "ceiling", "floor", "wall", "window", "chair", "bed",
    "sofa", "table", "tvs", "furniture", "objects",
)
NUM_SEMANTIC = len(CLASS_NAMES)
NUM_CLASSES = NUM_SEMANTIC + 1  # free + semantics
VALID_LABELS = tuple(range(NUM_CLASSES)) + (UNKNOWN,)


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned voxel grid. ``origin`` is the min corner of voxel (0, 0, 0)."""

    dims: tuple[int, int, int]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    voxel_size: float = 0.08

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        origin = tuple(float(x) for x in self.origin)
        if len(dims) != 3 or len(origin) != 3:
            raise DomainError("dims and origin must have three components")
        if any(n < 1 for n in dims):
            raise DomainError(f"grid extents must be >= 1, got {dims}")
        if not (self.voxel_size > 0 and np.isfinite(self.voxel_size)):
            raise DomainError(f"voxel_size must be positive, got {self.voxel_size}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @property
    def num_voxels(self) -> int:
        x, y, z = self.dims
        return x * y * z

    @property
    def extent(self) -> tuple[float, float, float]:
        return tuple(n * self.voxel_size for n in self.dims)

    def with_origin(self, origin) -> "GridSpec":
        return GridSpec(self.dims, tuple(origin), self.voxel_size)

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "origin": list(self.origin), "voxel_size": self.voxel_size}


# Defaults; the voxel sizes are configuration, not measured values.
OCC_SCANNET_GRID = GridSpec((60, 60, 36), voxel_size=0.08)
NYU_FULL_GRID = GridSpec((240, 144, 240), voxel_size=0.02)
NYU_EVAL_GRID = GridSpec((60, 36, 60), voxel_size=0.08)
GRID_PRESETS = {
    "occscannet": OCC_SCANNET_GRID,
    "nyu": NYU_EVAL_GRID,
    "nyu-full": NYU_FULL_GRID,
}


def centroid(spec: GridSpec, index) -> np.ndarray:
    idx = tuple(int(i) for i in index)
    if len(idx) != 3 or any(not 0 <= i < n for i, n in zip(idx, spec.dims)):
        raise DomainError(f"index {index} outside grid {spec.dims}")
    o, s = spec.origin, spec.voxel_size
    return np.array([o[a] + s * (idx[a] + 0.5) for a in range(3)])


def centroids(spec: GridSpec) -> np.ndarray:
    """All voxel centroids as a (X, Y, Z, 3) float64 array, same arithmetic as ``centroid``."""
    axes = [spec.origin[a] + spec.voxel_size * (np.arange(n) + 0.5) for a, n in enumerate(spec.dims)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


@dataclass(frozen=True, eq=False)
class LabelGrid:
    spec: GridSpec
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.shape != self.spec.dims:
            raise DomainError(f"label shape {labels.shape} does not match grid {self.spec.dims}")
        bad = (labels > NUM_SEMANTIC) & (labels != UNKNOWN) | (labels < 0)
        if bad.any():
            raise DomainError(f"labels outside {{0..11, 255}}: {np.unique(labels[bad])[:5]}")
        object.__setattr__(self, "labels", labels.astype(np.uint8, copy=False))


def class_histogram(g: LabelGrid | np.ndarray) -> dict[int, int]:
    """Counts of each label value present in the grid."""
    labels = g.labels if isinstance(g, LabelGrid) else np.asarray(g)
    counts = np.bincount(labels.reshape(-1).astype(np.int64), minlength=256)
    return {v: int(counts[v]) for v in VALID_LABELS if counts[v]}


def _blocks(labels: np.ndarray, factor: int) -> np.ndarray:
    X, Y, Z = labels.shape
    f = factor
    b = labels.reshape(X // f, f, Y // f, f, Z // f, f)
    return b.transpose(0, 2, 4, 1, 3, 5).reshape(X // f, Y // f, Z // f, f ** 3)


def downsample_labels(g: LabelGrid, factor: int) -> LabelGrid:
    """Reduce each factor^3 block to one label.

    Plurality over semantic labels 1..11 with the smallest id winning ties.
    A block without semantics becomes free if it holds any free voxel,
    otherwise unknown.
    """
    if factor < 1:
        raise DomainError("factor must be a positive integer")
    if any(n % factor for n in g.spec.dims):
        raise DomainError(f"dims {g.spec.dims} not divisible by {factor}")
    blocks = _blocks(g.labels, factor)
    counts = np.stack([(blocks == c).sum(axis=-1) for c in range(1, NUM_CLASSES)], axis=-1)
    best = counts.argmax(axis=-1)  # first maximum, i.e. smallest class id
    has_semantic = counts.max(axis=-1) > 0
    has_free = (blocks == FREE).any(axis=-1)
    out = np.where(has_semantic, best + 1, np.where(has_free, FREE, UNKNOWN)).astype(np.uint8)
    spec = GridSpec(
        tuple(n // factor for n in g.spec.dims), g.spec.origin, g.spec.voxel_size * factor
    )
    return LabelGrid(spec, out)
