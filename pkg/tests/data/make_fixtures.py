"""Regenerate the committed test fixtures.

    python tests/data/make_fixtures.py

Writes ``synthetic_scene/`` (a labeled point room with three cameras) and
``lift_toy/`` (a 4x4x4 lifting problem whose golden output comes from the
loop oracle in tests/oracles.py).
"""

import json
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

from oracles import naive_downsample_dist, naive_lift  # noqa: E402

from indoorocc import tensorio  # noqa: E402
from indoorocc.camera import CameraModel  # noqa: E402
from indoorocc.depthbin import DepthBinSpec, bin_edges  # noqa: E402
from indoorocc.voxel import GridSpec  # noqa: E402

SRC_VOXEL = 0.08
# camera looking along world +x / -x with z up: columns are camera x, y, z axes in world
FACING_PX = np.array([[0, 0, 1], [-1, 0, 0], [0, -1, 0]], dtype=float)
FACING_NX = np.array([[0, 0, -1], [1, 0, 0], [0, -1, 0]], dtype=float)

LIFT_GRID = GridSpec((4, 4, 4), (-0.5, -0.4, 0.9), 0.25)
LIFT_DEPTH = DepthBinSpec(0.5, 2.5, 4)


def lattice(lo, hi):
    """Centres of the source lattice inside [lo, hi) along one axis."""
    i0 = int(np.ceil(lo / SRC_VOXEL - 0.5))
    i1 = int(np.floor(hi / SRC_VOXEL - 0.5))
    return (np.arange(i0, i1 + 1) + 0.5) * SRC_VOXEL


def box_points(x, y, z, label):
    gx, gy, gz = np.meshgrid(lattice(*x), lattice(*y), lattice(*z), indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    return np.concatenate([pts, np.full((len(pts), 1), label)], axis=1)


def synthetic_room():
    room_x, room_y = (-3.0, 6.0), (-3.0, 3.0)
    parts = [
        box_points(room_x, room_y, (0.0, 0.08), 2),      # floor
        box_points(room_x, room_y, (2.72, 2.8), 1),      # ceiling
        box_points((5.92, 6.0), room_y, (0.0, 2.8), 3),  # far wall
        box_points((2.0, 3.2), (-0.8, 0.8), (0.16, 0.64), 7),  # sofa
    ]
    return np.concatenate(parts).astype(np.float32)


def camera_doc(rotation, position):
    pose = np.eye(4)
    pose[:3, :3] = rotation
    pose[:3, 3] = position
    cam = CameraModel(577.87, 577.87, 319.5, 239.5, 640, 480, pose)
    return tensorio.write_camera(cam)


def make_scene(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    (root / "cameras").mkdir(exist_ok=True)
    tensorio.save_tensor(root / "points.occt", synthetic_room())
    (root / "bounds.json").write_text(json.dumps({"min": [-3.0, -3.0, 0.0], "max": [6.0, 3.0, 2.8]}, indent=2) + "\n")
    (root / "scene.json").write_text(json.dumps({"scene_id": "synthetic0000_00", "source_voxel_size": SRC_VOXEL}, indent=2) + "\n")
    cams = {
        "0": (FACING_PX, (0.0, 0.0, 1.4)),   # looks into the room
        "1": (FACING_NX, (5.2, 0.3, 1.4)),   # looks back across the room
        "2": (FACING_NX, (-2.6, 0.0, 1.4)),  # looks out of the room: nearly empty grid
    }
    for fid, (rot, pos) in cams.items():
        (root / "cameras" / f"{fid}.json").write_text(camera_doc(rot, pos))


def dyadic_distribution(rng, n_bins, H, W, denom=64):
    """Per-pixel distributions with values k/denom so block means are exact in float32."""
    counts = np.zeros((n_bins, H, W), dtype=np.int64)
    for r in range(H):
        for c in range(W):
            cuts = np.sort(rng.integers(0, denom + 1, size=n_bins - 1))
            parts = np.diff(np.concatenate([[0], cuts, [denom]]))
            counts[:, r, c] = parts
    return (counts / denom).astype(np.float32)


def make_lift_toy(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(7)
    H, W, C = 16, 24, 2
    cam = CameraModel(20.0, 20.0, 12.0, 8.0, W, H, np.eye(4))
    (root / "camera.json").write_text(tensorio.write_camera(cam))
    levels = {}
    for k in (1, 2, 4, 8):
        # quarter steps keep products with dyadic weights exact
        levels[k] = (rng.integers(-8, 9, size=(C, H // k, W // k)) / 4).astype(np.float32)
        tensorio.save_tensor(root / f"feat{k}.occt", levels[k])
    dist = dyadic_distribution(rng, LIFT_DEPTH.n_bins, H, W)
    tensorio.save_tensor(root / "dist.occt", dist)
    dists = {1: dist}
    for k in (2, 4, 8):
        dists[k] = naive_downsample_dist(dist, k).astype(np.float32)
    golden, valid = naive_lift(cam, LIFT_GRID, levels, dists, bin_edges(LIFT_DEPTH))
    tensorio.save_tensor(root / "golden.occt", golden)
    return valid


if __name__ == "__main__":
    make_scene(HERE / "synthetic_scene")
    valid = make_lift_toy(HERE / "lift_toy")
    print(f"lift_toy valid voxels: {int(valid.sum())}/{valid.size}")
