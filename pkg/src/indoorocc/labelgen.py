"""
Per-frame occupancy label generation from a labeled scene point set.

Pipeline for one frame: validate the pose, place a world-aligned grid in
front of the camera, give every voxel the label of its nearest source point
(unknown beyond a distance cutoff), then drop frames that are almost empty
or show fewer than two semantic classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .camera import CameraModel, rotation_deviation
from .errors import DegenerateViewError, DomainError, InvalidPoseError
from .voxel import FREE, NUM_SEMANTIC, OCC_SCANNET_GRID, UNKNOWN, GridSpec, LabelGrid, centroids

POSE_TOL = 1e-3
EMPTY_RATIO_LIMIT = (95, 100)  # reject when empty/total > 95/100
MIN_SEMANTIC_CLASSES = 2

KEEP = "keep"
REJECT = "reject"
REASONS = ("none", "invalid_pose", "out_of_bounds", "empty_ratio", "class_count")


@dataclass(frozen=True)
class FrameDecision:
    verdict: str = KEEP
    reason: str = "none"

    def __post_init__(self):
        if self.verdict not in (KEEP, REJECT):
            raise DomainError(f"verdict must be keep or reject, got {self.verdict!r}")
        if self.reason not in REASONS:
            raise DomainError(f"unknown reason {self.reason!r}")
        if (self.verdict == REJECT) == (self.reason == "none"):
            raise DomainError("a rejection needs a reason and a keep must not have one")

    @property
    def kept(self) -> bool:
        return self.verdict == KEEP

    @classmethod
    def reject(cls, reason: str) -> "FrameDecision":
        return cls(REJECT, reason)


@dataclass(frozen=True)
class SceneBounds:
    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(x) for x in self.min_corner)
        hi = tuple(float(x) for x in self.max_corner)
        if len(lo) != 3 or len(hi) != 3 or any(a > b for a, b in zip(lo, hi)):
            raise DomainError(f"bad scene bounds {lo} .. {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    def contains(self, p) -> bool:
        return all(lo <= x <= hi for lo, x, hi in zip(self.min_corner, p, self.max_corner))


@dataclass(frozen=True, eq=False)
class LabeledPointSet:
    points: np.ndarray
    labels: np.ndarray
    source_voxel_size: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        labels = np.asarray(self.labels)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
            raise DomainError(f"points must be a nonempty (P, 3) array, got {pts.shape}")
        if labels.shape != (len(pts),):
            raise DomainError("one label per point required")
        if not np.isfinite(pts).all():
            raise DomainError("point coordinates must be finite")
        if labels.min() < 0 or labels.max() > NUM_SEMANTIC:
            raise DomainError("point labels must lie in 0..11")
        if not self.source_voxel_size > 0:
            raise DomainError("source_voxel_size must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels.astype(np.uint8))

    @classmethod
    def from_tensor(cls, table: np.ndarray, source_voxel_size: float) -> "LabeledPointSet":
        """Build from a (P, 4) array of x, y, z, label."""
        table = np.asarray(table)
        if table.ndim != 2 or table.shape[1] != 4:
            raise DomainError(f"point table must be (P, 4), got {table.shape}")
        raw = table[:, 3]
        if not np.array_equal(raw, np.round(raw)):
            raise DomainError("point labels must be integral")
        return cls(table[:, :3], raw.astype(np.int64), source_voxel_size)

    @property
    def default_max_dist(self) -> float:
        return self.source_voxel_size * math.sqrt(3.0)


@dataclass(frozen=True)
class LabelGenConfig:
    dims: tuple[int, int, int] = OCC_SCANNET_GRID.dims
    voxel_size: float = OCC_SCANNET_GRID.voxel_size
    max_dist: float | None = None  # None: one source-voxel diagonal
    floor_height: float = 0.0
    seed: int = 0
    n_frames: int = 100
    train_ratio: float = 0.7


# -- frame sampling ------------------------------------------------------------


def sample_frames(frame_ids: Sequence, n: int = 100, seed: int = 0) -> list:
    """Pick ``n`` frames spread over the sequence: one per stride window, seeded position within it."""
    if n <= 0:
        raise DomainError("n must be positive")
    ids = list(frame_ids)
    if not ids:
        raise DomainError("no frames to sample from")
    if len(ids) <= n:
        return ids
    # disjoint integer windows, each at least one frame wide, so picks never collide
    bounds = [(i * len(ids)) // n for i in range(n + 1)]
    jitter = np.random.default_rng(seed).random(n)
    picks = [lo + int(jitter[i] * (hi - lo)) for i, (lo, hi) in enumerate(zip(bounds, bounds[1:]))]
    return [ids[j] for j in picks]


def split_frames(selected: Sequence, train_ratio: float = 0.7, seed: int = 0) -> tuple[list, list]:
    """Seeded train/val split with round-half-up train count. Input order is kept within each part."""
    ids = list(selected)
    if not ids:
        raise DomainError("nothing to split")
    if not 0.0 <= train_ratio <= 1.0:
        raise DomainError("train_ratio must lie in [0, 1]")
    n_train = int(math.floor(train_ratio * len(ids) + 0.5))
    order = np.random.default_rng(seed).permutation(len(ids))
    train_pos = set(order[:n_train].tolist())
    train = [x for i, x in enumerate(ids) if i in train_pos]
    val = [x for i, x in enumerate(ids) if i not in train_pos]
    return train, val


# -- geometry ------------------------------------------------------------------


def validate_pose(pose, scene_bounds: SceneBounds) -> FrameDecision:
    """Check a cam_to_world matrix (or camera) for finiteness, rotation sanity and position."""
    if isinstance(pose, CameraModel):
        pose = pose.cam_to_world
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4) or not np.isfinite(pose).all():
        return FrameDecision.reject("invalid_pose")
    if rotation_deviation(pose) > POSE_TOL:
        return FrameDecision.reject("invalid_pose")
    if not scene_bounds.contains(pose[:3, 3]):
        return FrameDecision.reject("out_of_bounds")
    return FrameDecision()


def select_origin(cam: CameraModel, dims, voxel_size: float, floor_height: float = 0.0) -> tuple[float, float, float]:
    """Min corner of a world-aligned grid (z up) whose footprint sits ahead of the camera.

    The footprint centre is the camera position moved half the grid's x extent
    along the camera's horizontal viewing direction.
    """
    fwd = np.asarray(cam.forward, dtype=np.float64)
    horiz = math.hypot(fwd[0], fwd[1])
    if horiz < 1e-6:
        raise DegenerateViewError("camera looks straight up or down")
    half_x = dims[0] * voxel_size / 2.0
    half_y = dims[1] * voxel_size / 2.0
    pos = cam.position
    cx = pos[0] + half_x * fwd[0] / horiz
    cy = pos[1] + half_x * fwd[1] / horiz
    return (float(cx - half_x), float(cy - half_y), float(floor_height))


# -- label transfer --------------------------------------------------------------


def _sq_dist(cx, cy, cz, px, py, pz):
    dx = cx - px
    dy = cy - py
    dz = cz - pz
    return dx * dx + dy * dy + dz * dz


def transfer_labels(src: LabeledPointSet, spec: GridSpec, max_dist: float | None = None) -> LabelGrid:
    """Label of the nearest source point per voxel centroid, or unknown beyond ``max_dist``.

    Distance ties go to the lowest point index. Candidates come from a uniform
    hash with cells of edge ``max_dist``, so only the 27 cells around a voxel
    are searched.
    """
    if max_dist is None:
        max_dist = src.default_max_dist
    if not max_dist > 0 or not math.isfinite(max_dist):
        raise DomainError("max_dist must be positive and finite")
    cent = centroids(spec).reshape(-1, 3)
    pts = src.points
    # slightly oversized cells keep every point within max_dist inside the 27-cell neighbourhood
    cell = max_dist * (1.0 + 1e-6)
    base = np.minimum(cent.min(axis=0), pts.min(axis=0))
    pcell = np.floor((pts - base) / cell).astype(np.int64)
    ccell = np.floor((cent - base) / cell).astype(np.int64)
    span = np.maximum(pcell.max(axis=0), ccell.max(axis=0)) + 3
    # shift by one so neighbour offsets of -1 stay non-negative
    def key(c):
        c = c + 1
        return (c[..., 0] * span[1] + c[..., 1]) * span[2] + c[..., 2]

    pkey = key(pcell)
    order = np.argsort(pkey, kind="stable")
    sorted_keys = pkey[order]
    uniq, starts, counts = np.unique(sorted_keys, return_index=True, return_counts=True)

    n = len(cent)
    best_d2 = np.full(n, np.inf)
    best_idx = np.full(n, len(pts), dtype=np.int64)
    cx, cy, cz = cent[:, 0], cent[:, 1], cent[:, 2]
    for off in np.stack(np.meshgrid([-1, 0, 1], [-1, 0, 1], [-1, 0, 1], indexing="ij"), -1).reshape(-1, 3):
        k = key(ccell + off)
        slot = np.searchsorted(uniq, k)
        slot_c = np.minimum(slot, len(uniq) - 1)
        hit = uniq[slot_c] == k
        if not hit.any():
            continue
        vox = np.nonzero(hit)[0]
        start = starts[slot_c[vox]]
        cnt = counts[slot_c[vox]]
        for j in range(int(cnt.max())):
            live = cnt > j
            v = vox[live]
            pidx = order[start[live] + j]
            d2 = _sq_dist(cx[v], cy[v], cz[v], pts[pidx, 0], pts[pidx, 1], pts[pidx, 2])
            better = (d2 < best_d2[v]) | ((d2 == best_d2[v]) & (pidx < best_idx[v]))
            best_d2[v[better]] = d2[better]
            best_idx[v[better]] = pidx[better]

    found = best_idx < len(pts)
    within = np.zeros(n, dtype=bool)
    within[found] = np.sqrt(best_d2[found]) <= max_dist
    labels = np.full(n, UNKNOWN, dtype=np.uint8)
    labels[within] = src.labels[best_idx[within]]
    return LabelGrid(spec, labels.reshape(spec.dims))


# -- filtering -------------------------------------------------------------------


def frame_filter(g: LabelGrid) -> FrameDecision:
    labels = g.labels
    total = labels.size
    empty = int(np.count_nonzero((labels == FREE) | (labels == UNKNOWN)))
    num, den = EMPTY_RATIO_LIMIT
    if empty * den > num * total:
        return FrameDecision.reject("empty_ratio")
    present = np.unique(labels)
    semantic = [c for c in present.tolist() if 1 <= c <= NUM_SEMANTIC]
    if len(semantic) < MIN_SEMANTIC_CLASSES:
        return FrameDecision.reject("class_count")
    return FrameDecision()


@dataclass
class FrameResult:
    frame_id: str
    decision: FrameDecision
    grid: LabelGrid | None = None
    origin: tuple[float, float, float] | None = None
    stats: dict = field(default_factory=dict)


def generate_frame_label(
    points: LabeledPointSet,
    bounds: SceneBounds,
    frame_id: str,
    pose: np.ndarray,
    intrinsics: dict,
    config: LabelGenConfig,
) -> FrameResult:
    """Run pose check, origin placement, transfer and filtering for one frame.

    ``intrinsics`` carries fx, fy, cx, cy, width, height. The grid is returned
    only for kept frames.
    """
    decision = validate_pose(pose, bounds)
    if not decision.kept:
        return FrameResult(frame_id, decision)
    try:
        cam = CameraModel(cam_to_world=pose, **intrinsics)
    except InvalidPoseError:
        return FrameResult(frame_id, FrameDecision.reject("invalid_pose"))
    try:
        origin = select_origin(cam, config.dims, config.voxel_size, config.floor_height)
    except DegenerateViewError:
        return FrameResult(frame_id, FrameDecision.reject("invalid_pose"))
    spec = GridSpec(config.dims, origin, config.voxel_size)
    grid = transfer_labels(points, spec, config.max_dist)
    decision = frame_filter(grid)
    return FrameResult(frame_id, decision, grid if decision.kept else None, origin)
