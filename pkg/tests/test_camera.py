import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from indoorocc.camera import CameraModel, PixelDepth, in_fov, project, unproject, world_to_camera
from indoorocc.errors import DomainError, InvalidPoseError


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_camera(seed):
    rng = np.random.default_rng(seed)
    return CameraModel.from_pose(
        rng.uniform(100, 800), rng.uniform(100, 800), rng.uniform(0, 640), rng.uniform(0, 480),
        640, 480, rotation=random_rotation(rng), translation=rng.uniform(-5, 5, 3),
    )


@pytest.fixture
def cam100():
    return CameraModel.from_pose(100, 100, 50, 50, 100, 100)


def test_identity_world_to_camera():
    cam = CameraModel.from_pose(500, 500, 320, 240, 640, 480)
    assert world_to_camera(cam, (1, 2, 3)).tolist() == [1, 2, 3]


def test_translation_world_to_camera():
    cam = CameraModel.from_pose(500, 500, 320, 240, 640, 480, translation=(0, 0, 5))
    assert world_to_camera(cam, (0, 0, 5)).tolist() == [0, 0, 0]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.lists(st.floats(-50, 50), min_size=6, max_size=6))
def test_rigid_transform_preserves_distances(seed, coords):
    cam = random_camera(seed)
    p, q = np.array(coords[:3]), np.array(coords[3:])
    a, b = world_to_camera(cam, p), world_to_camera(cam, q)
    ref = np.linalg.norm(p - q)
    assert abs(np.linalg.norm(a - b) - ref) <= 1e-6 * max(1.0, ref)


def test_project_principal_axis(cam100):
    pd = project(cam100, (0, 0, 2))
    assert (pd.u, pd.v, pd.z, pd.valid) == (50.0, 50.0, 2.0, True)


def test_project_off_axis(cam100):
    # u = 100 * 1 / 2 + 50
    pd = project(cam100, (1, 0, 2))
    assert (pd.u, pd.v, pd.z) == (100.0, 50.0, 2.0)


def test_behind_camera_flagged(cam100):
    pd = project(cam100, (0, 0, -1))
    assert pd.valid is False
    assert in_fov(cam100, pd) is False


def test_projection_scale_invariance(cam100):
    p = np.array([0.3, -0.2, 1.5])
    a = project(cam100, p)
    b = project(cam100, 2.5 * p)
    assert a.u == pytest.approx(b.u, abs=1e-12) and a.v == pytest.approx(b.v, abs=1e-12)
    assert b.z == pytest.approx(2.5 * a.z)


def test_in_fov_bounds():
    cam = CameraModel.from_pose(10, 10, 5, 5, 10, 10)
    assert in_fov(cam, PixelDepth(0.0, 0.0, 1.0, True))
    assert not in_fov(cam, PixelDepth(10.0, 5.0, 1.0, True))
    assert not in_fov(cam, PixelDepth(5.0, 10.0, 1.0, True))
    assert not in_fov(cam, PixelDepth(2.0, 2.0, 1.0, False))


def test_unproject_principal_axis():
    cam = CameraModel.from_pose(500, 500, 320, 240, 640, 480)
    assert unproject(cam, 320, 240, 3).tolist() == [0, 0, 3]


def test_unproject_rejects_nonpositive_depth(cam100):
    with pytest.raises(DomainError):
        unproject(cam100, 1, 1, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(-1000, 1000), st.floats(-1000, 1000), st.floats(1e-3, 100))
def test_unproject_round_trip(seed, u, v, z):
    cam = random_camera(seed)
    pd = project(cam, unproject(cam, u, v, z))
    tol = 1e-6 * max(1.0, abs(z))
    assert abs(pd.u - u) <= tol * max(1.0, abs(u))
    assert abs(pd.v - v) <= tol * max(1.0, abs(v))
    assert abs(pd.z - z) <= tol


def test_vectorized_matches_scalar():
    cam = random_camera(3)
    pts = np.random.default_rng(1).uniform(-4, 4, size=(50, 3))
    batch = project(cam, pts)
    for i, p in enumerate(pts):
        one = project(cam, p)
        assert one.valid == batch.valid[i]
        if one.valid:
            assert one.u == batch.u[i] and one.v == batch.v[i] and one.z == batch.z[i]


def test_construction_checks():
    with pytest.raises(InvalidPoseError):
        CameraModel.from_pose(100, 100, 50, 50, 100, 100, rotation=np.diag([1.0, 1.0, 1.001]))
    with pytest.raises(DomainError):
        CameraModel.from_pose(0, 100, 50, 50, 100, 100)
    with pytest.raises(DomainError):
        CameraModel.from_pose(100, 100, 50, 50, 0, 100)
