"""
Pinhole camera: rigid world/camera transforms and perspective projection.

Camera frame is x right, y down, z forward. ``cam_to_world`` maps camera
coordinates to world coordinates. Integer pixel (col, row) sits at continuous
(u, v) = (col, row).

All point functions accept a single point of shape (3,) or a stack (..., 3)
and use the same component-wise arithmetic for both, so a scalar loop and a
vectorized call give bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, InvalidPoseError

MIN_DEPTH = 1e-9
ORTHONORMAL_TOL = 1e-5


def rotation_deviation(pose: np.ndarray) -> float:
    """Max-abs entry of R^T R - I for the rotation block of a 4x4 pose."""
    rot = np.asarray(pose, dtype=np.float64)[:3, :3]
    return float(np.abs(rot.T @ rot - np.eye(3)).max())


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    cam_to_world: np.ndarray

    def __post_init__(self):
        pose = np.array(self.cam_to_world, dtype=np.float64).reshape(4, 4)
        if not np.isfinite(pose).all():
            raise InvalidPoseError("cam_to_world has non-finite entries")
        for name in ("fx", "fy", "cx", "cy"):
            if not np.isfinite(getattr(self, name)):
                raise InvalidPoseError(f"{name} is not finite")
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise DomainError("image extents must be >= 1")
        dev = rotation_deviation(pose)
        if dev > ORTHONORMAL_TOL:
            raise InvalidPoseError(f"rotation not orthonormal (deviation {dev:.3g})")
        pose.setflags(write=False)
        object.__setattr__(self, "fx", float(self.fx))
        object.__setattr__(self, "fy", float(self.fy))
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "cam_to_world", pose)

    @classmethod
    def from_pose(cls, fx, fy, cx, cy, width, height, rotation=None, translation=(0.0, 0.0, 0.0)):
        pose = np.eye(4)
        if rotation is not None:
            pose[:3, :3] = rotation
        pose[:3, 3] = translation
        return cls(fx, fy, cx, cy, width, height, pose)

    @property
    def rotation(self) -> np.ndarray:
        return self.cam_to_world[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.cam_to_world[:3, 3]

    @property
    def forward(self) -> np.ndarray:
        """Optical axis (camera +z) in world coordinates."""
        return self.cam_to_world[:3, 2]


class PixelDepth(NamedTuple):
    u: np.ndarray | float
    v: np.ndarray | float
    z: np.ndarray | float
    valid: np.ndarray | bool


def world_to_camera(cam: CameraModel, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    r = cam.cam_to_world
    dx = p[..., 0] - r[0, 3]
    dy = p[..., 1] - r[1, 3]
    dz = p[..., 2] - r[2, 3]
    # R^T (p - t), written out so every caller rounds identically
    x = r[0, 0] * dx + r[1, 0] * dy + r[2, 0] * dz
    y = r[0, 1] * dx + r[1, 1] * dy + r[2, 1] * dz
    z = r[0, 2] * dx + r[1, 2] * dy + r[2, 2] * dz
    return np.stack([x, y, z], axis=-1)


def camera_to_world(cam: CameraModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    r = cam.cam_to_world
    x, y, z = q[..., 0], q[..., 1], q[..., 2]
    return np.stack(
        [
            r[0, 0] * x + r[0, 1] * y + r[0, 2] * z + r[0, 3],
            r[1, 0] * x + r[1, 1] * y + r[1, 2] * z + r[1, 3],
            r[2, 0] * x + r[2, 1] * y + r[2, 2] * z + r[2, 3],
        ],
        axis=-1,
    )


def project_camera_points(cam: CameraModel, q) -> PixelDepth:
    """Perspective projection of camera-frame points."""
    q = np.asarray(q, dtype=np.float64)
    x, y, z = q[..., 0], q[..., 1], q[..., 2]
    valid = z > MIN_DEPTH
    with np.errstate(divide="ignore", invalid="ignore"):
        safe_z = np.where(valid, z, 1.0)
        u = np.where(valid, cam.fx * x / safe_z + cam.cx, np.nan)
        v = np.where(valid, cam.fy * y / safe_z + cam.cy, np.nan)
    if q.ndim == 1:
        return PixelDepth(float(u), float(v), float(z), bool(valid))
    return PixelDepth(u, v, z, valid)


def project(cam: CameraModel, p) -> PixelDepth:
    """Project world point(s). ``z`` is camera-frame depth, not ray length.

    Points with z <= 1e-9 come back with ``valid`` False and NaN pixel
    coordinates instead of raising.
    """
    return project_camera_points(cam, world_to_camera(cam, p))


def in_fov(cam: CameraModel, pd: PixelDepth):
    u, v = np.asarray(pd.u), np.asarray(pd.v)
    with np.errstate(invalid="ignore"):
        inside = (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    out = np.asarray(pd.valid, dtype=bool) & inside
    return bool(out) if out.ndim == 0 else out


def unproject(cam: CameraModel, u, v, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if np.any(~(z > 0)):
        raise DomainError("unproject needs z > 0")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x = (u - cam.cx) * z / cam.fx
    y = (v - cam.cy) * z / cam.fy
    return camera_to_world(cam, np.stack([x, y, z], axis=-1))
