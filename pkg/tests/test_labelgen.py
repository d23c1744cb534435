import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_transfer

from indoorocc import tensorio
from indoorocc.camera import CameraModel
from indoorocc.errors import DegenerateViewError, DomainError
from indoorocc.labelgen import (
    FrameDecision,
    LabelGenConfig,
    LabeledPointSet,
    SceneBounds,
    frame_filter,
    generate_frame_label,
    sample_frames,
    select_origin,
    split_frames,
    transfer_labels,
    validate_pose,
)
from indoorocc.voxel import GridSpec, LabelGrid

SCENE = Path(__file__).parent / "data" / "synthetic_scene"
FACING_PX = np.array([[0, 0, 1], [-1, 0, 0], [0, -1, 0]], dtype=float)
FACING_NY = np.array([[-1, 0, 0], [0, 0, -1], [0, -1, 0]], dtype=float)
LOOK_DOWN = np.array([[1, 0, 0], [0, -1, 0], [0, 0, -1]], dtype=float)
BOUNDS = SceneBounds((-3, -3, 0), (6, 3, 2.8))


def cam_with(rotation, position=(0.0, 0.0, 1.4)):
    return CameraModel.from_pose(500, 500, 320, 240, 640, 480, rotation=rotation, translation=position)


def test_sample_all_when_few():
    ids = list(range(50))
    assert sample_frames(ids, 100, seed=3) == ids


def test_sample_hundred_distinct_deterministic():
    ids = [f"f{i:04d}" for i in range(2000)]
    a = sample_frames(ids, 100, seed=1)
    assert len(a) == 100 and len(set(a)) == 100
    assert a == sample_frames(ids, 100, seed=1)
    assert a == sorted(a)
    assert a != sample_frames(ids, 100, seed=2)


@given(st.integers(101, 600), st.integers(1, 100), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_sample_distinct_property(total, n, seed):
    picked = sample_frames(range(total), n, seed)
    assert len(picked) == n and len(set(picked)) == n


def test_sample_rejects_nonpositive():
    with pytest.raises(DomainError):
        sample_frames([1, 2, 3], 0)
    with pytest.raises(DomainError):
        sample_frames([], 5)


@pytest.mark.parametrize("n,train", [(100, 70), (10, 7), (3, 2), (1, 1), (5, 4)])
def test_split_sizes(n, train):
    tr, va = split_frames(list(range(n)), 0.7, seed=0)
    assert len(tr) == train and len(va) == n - train
    assert sorted(tr + va) == list(range(n))
    assert tr == sorted(tr) and va == sorted(va)


def test_split_seeded():
    ids = list(range(40))
    assert split_frames(ids, 0.7, 9) == split_frames(ids, 0.7, 9)
    assert split_frames(ids, 0.7, 9) != split_frames(ids, 0.7, 10)


def test_validate_pose_cases():
    good = cam_with(FACING_PX).cam_to_world
    assert validate_pose(good, BOUNDS).kept
    bad = good.copy()
    bad[0, 0] = np.nan
    assert validate_pose(bad, BOUNDS) == FrameDecision.reject("invalid_pose")
    skew = good.copy()
    skew[:3, :3] *= 1.01
    assert validate_pose(skew, BOUNDS).reason == "invalid_pose"
    outside = good.copy()
    outside[:3, 3] = (10.0, 0.0, 1.4)
    assert validate_pose(outside, BOUNDS).reason == "out_of_bounds"


def test_decision_invariants():
    with pytest.raises(DomainError):
        FrameDecision("reject", "none")
    with pytest.raises(DomainError):
        FrameDecision("keep", "empty_ratio")


def test_origin_facing_plus_x():
    origin = select_origin(cam_with(FACING_PX, (0, 0, 1.4)), (60, 60, 36), 0.08)
    assert origin == pytest.approx((0.0, -2.4, 0.0), abs=1e-12)


def test_origin_facing_minus_y():
    origin = select_origin(cam_with(FACING_NY, (1.0, 0.5, 1.4)), (60, 60, 36), 0.08, floor_height=0.1)
    # footprint centre sits 2.4 m along -y from the camera
    assert origin == pytest.approx((1.0 - 2.4, 0.5 - 2.4 - 2.4, 0.1), abs=1e-12)


def test_origin_looking_down_is_degenerate():
    with pytest.raises(DegenerateViewError):
        select_origin(cam_with(LOOK_DOWN), (60, 60, 36), 0.08)


def test_transfer_exact_hit_and_cutoff():
    spec = GridSpec((2, 1, 1), (0, 0, 0), 1.0)
    pts = LabeledPointSet(np.array([[0.5, 0.5, 0.5], [3.0, 0.5, 0.5]]), np.array([4, 6]), 0.5)
    g = transfer_labels(pts, spec, max_dist=0.9)
    # voxel 1 centre (1.5, .5, .5) is 1.0 from the first point and 1.5 from the second
    assert g.labels.ravel().tolist() == [4, 255]
    assert transfer_labels(pts, spec, max_dist=1.0).labels.ravel().tolist() == [4, 4]


def test_transfer_tie_lowest_index():
    spec = GridSpec((1, 1, 1), (0, 0, 0), 1.0)
    pts = LabeledPointSet(np.array([[1.0, 0.5, 0.5], [0.0, 0.5, 0.5]]), np.array([9, 3]), 1.0)
    assert transfer_labels(pts, spec, 1.0).labels.item() == 9


def test_transfer_default_cutoff():
    pts = LabeledPointSet(np.zeros((1, 3)), np.array([5]), 0.08)
    assert pts.default_max_dist == pytest.approx(0.08 * 3**0.5)


@pytest.mark.parametrize("seed", range(25))
def test_transfer_matches_exhaustive(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(x) for x in rng.integers(1, 9, 3))
    spec = GridSpec(dims, tuple(rng.uniform(-1, 1, 3)), float(rng.uniform(0.1, 0.4)))
    n = int(rng.integers(1, 33))
    lo = np.array(spec.origin) - 0.3
    hi = lo + np.array(dims) * spec.voxel_size + 0.6
    pts = rng.uniform(lo, hi, (n, 3))
    if n > 2:
        pts[1] = pts[0]  # duplicate location exercises the tie rule
    labels = rng.integers(0, 12, n)
    max_dist = float(rng.uniform(0.05, 0.8))
    got = transfer_labels(LabeledPointSet(pts, labels, 0.1), spec, max_dist)
    np.testing.assert_array_equal(got.labels, naive_transfer(pts, labels, spec, max_dist))


def _grid(values):
    arr = np.asarray(values, dtype=np.uint8)
    return LabelGrid(GridSpec((arr.size, 1, 1)), arr.reshape(-1, 1, 1))


def test_filter_empty_ratio_boundary():
    at_limit = [0] * 95 + [1] * 3 + [2] * 2
    assert frame_filter(_grid(at_limit)).kept
    one_more = [0] * 96 + [1] * 2 + [2] * 2  # 96 of 100 empty
    assert frame_filter(_grid(one_more)).reason == "empty_ratio"


def test_filter_counts_unknown_as_empty():
    g = [255] * 96 + [1] * 2 + [2] * 2
    assert frame_filter(_grid(g)).reason == "empty_ratio"


def test_filter_single_class():
    assert frame_filter(_grid([0] * 10 + [5] * 10)).reason == "class_count"
    assert frame_filter(_grid([5] * 10 + [6])).kept


def test_generate_on_fixture_scene():
    table = tensorio.load_tensor(SCENE / "points.occt")
    pts = LabeledPointSet.from_tensor(table, 0.08)
    b = json.loads((SCENE / "bounds.json").read_text())
    bounds = SceneBounds(b["min"], b["max"])
    cfg = LabelGenConfig()
    verdicts = {}
    for fid in ("0", "1", "2"):
        cam = tensorio.load_camera(SCENE / "cameras" / f"{fid}.json")
        intr = {k: getattr(cam, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}
        res = generate_frame_label(pts, bounds, fid, cam.cam_to_world, intr, cfg)
        verdicts[fid] = res.decision.reason
        if res.decision.kept:
            assert res.grid.labels.shape == (60, 60, 36)
            assert res.grid.spec.origin == res.origin
            assert {1, 2}.issubset(set(np.unique(res.grid.labels).tolist()))
    assert verdicts == {"0": "none", "1": "none", "2": "empty_ratio"}


def test_generate_degenerate_view_rejected():
    pts = LabeledPointSet(np.zeros((1, 3)), np.array([1]), 0.08)
    cam = cam_with(LOOK_DOWN)
    intr = {k: getattr(cam, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}
    res = generate_frame_label(pts, BOUNDS, "x", cam.cam_to_world, intr, LabelGenConfig())
    assert res.decision.reason == "invalid_pose" and res.grid is None
