"""
Binary tensor container, camera documents and dataset manifests.

Tensor file layout (all integers little-endian):

    bytes 0-3   magic b"OCCT"
    bytes 4-5   version, u16 (= 1)
    byte  6     dtype code (0=f32, 1=f64, 2=u8, 3=i64)
    byte  7     rank r, 1 <= r <= 8
    8 .. 8+8r   r extents, u64 each
    payload     row-major (last axis fastest), little-endian elements

Camera documents and manifests are JSON.
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

from .camera import CameraModel
from .errors import InvalidPoseError

MAGIC = b"OCCT"
VERSION = 1
MAX_RANK = 8

DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("u1"): 2,
    np.dtype("<i8"): 3,
}
CODE_DTYPES = {code: dt for dt, code in DTYPE_CODES.items()}

_HEAD = struct.Struct("<4sHBB")


class TensorIOError(Exception):
    """Base class for container errors."""


class TensorFormatError(TensorIOError):
    pass


class LengthMismatchError(TensorIOError):
    pass


class UnsupportedDtypeError(TensorIOError):
    pass


class CameraFormatError(ValueError):
    pass


class ManifestError(ValueError):
    pass


def header_size(rank: int) -> int:
    return _HEAD.size + 8 * rank


def _dtype_code(dtype) -> int:
    dt = np.dtype(dtype)
    for known, code in DTYPE_CODES.items():
        if dt.kind == known.kind and dt.itemsize == known.itemsize:
            return code
    raise UnsupportedDtypeError(f"dtype {dt} has no container code")


def check_tensor(arr: np.ndarray) -> None:
    """Raise unless ``arr`` is representable: rank 1..8, every extent >= 1."""
    if arr.ndim < 1 or arr.ndim > MAX_RANK:
        raise TensorFormatError(f"rank {arr.ndim} outside 1..{MAX_RANK}")
    if any(n < 1 for n in arr.shape):
        raise TensorFormatError(f"extents must be >= 1, got {arr.shape}")
    _dtype_code(arr.dtype)


def encode_header(shape: Iterable[int], dtype) -> bytes:
    shape = tuple(int(n) for n in shape)
    return _HEAD.pack(MAGIC, VERSION, _dtype_code(dtype), len(shape)) + struct.pack(
        f"<{len(shape)}Q", *shape
    )


def write_tensor(arr: np.ndarray, sink: BinaryIO) -> int:
    """Serialize ``arr`` to ``sink``; returns the number of bytes written."""
    arr = np.asarray(arr)
    check_tensor(arr)
    code = _dtype_code(arr.dtype)
    head = encode_header(arr.shape, arr.dtype)
    payload = np.ascontiguousarray(arr, dtype=CODE_DTYPES[code]).tobytes(order="C")
    offset = 0
    for chunk in (head, payload):
        try:
            sink.write(chunk)
        except OSError as exc:
            raise TensorIOError(f"write failed at byte offset {offset}: {exc}") from exc
        offset += len(chunk)
    return offset


def _read_exact(source: BinaryIO, n: int) -> bytes:
    buf = source.read(n)
    return b"" if buf is None else buf


def read_tensor(source: BinaryIO) -> np.ndarray:
    head = _read_exact(source, _HEAD.size)
    if len(head) < _HEAD.size:
        raise TensorFormatError("truncated header")
    magic, version, code, rank = _HEAD.unpack(head)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    if code not in CODE_DTYPES:
        raise UnsupportedDtypeError(f"unknown dtype code {code}")
    if not 1 <= rank <= MAX_RANK:
        raise TensorFormatError(f"rank {rank} outside 1..{MAX_RANK}")
    raw = _read_exact(source, 8 * rank)
    if len(raw) < 8 * rank:
        raise TensorFormatError("truncated extents")
    shape = struct.unpack(f"<{rank}Q", raw)
    if any(n < 1 for n in shape):
        raise TensorFormatError(f"extents must be >= 1, got {shape}")
    dtype = CODE_DTYPES[code]
    count = math.prod(shape)
    nbytes = count * dtype.itemsize
    payload = _read_exact(source, nbytes)
    if len(payload) != nbytes:
        raise LengthMismatchError(
            f"header declares {count} elements ({nbytes} bytes), payload has {len(payload)} bytes"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(arr, buf)
    return buf.getvalue()


def tensor_from_bytes(data: bytes) -> np.ndarray:
    buf = io.BytesIO(data)
    arr = read_tensor(buf)
    extra = len(data) - buf.tell()
    if extra:
        raise LengthMismatchError(f"{extra} trailing bytes after payload")
    return arr


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_tensor(path: str | os.PathLike, arr: np.ndarray) -> int:
    data = tensor_to_bytes(arr)
    atomic_write_bytes(path, data)
    return len(data)


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def save_label_grid(path: str | os.PathLike, labels: np.ndarray) -> int:
    labels = np.asarray(labels)
    if labels.ndim != 3 or labels.dtype != np.uint8:
        raise TensorFormatError(f"label grid must be rank-3 u8, got {labels.dtype} {labels.shape}")
    return save_tensor(path, labels)


def load_label_grid(path: str | os.PathLike) -> np.ndarray:
    labels = load_tensor(path)
    if labels.ndim != 3 or labels.dtype != np.uint8:
        raise TensorFormatError(f"{path}: not a rank-3 u8 label grid")
    return labels


# -- cameras -----------------------------------------------------------------

_INTRINSIC_KEYS = ("fx", "fy", "cx", "cy", "width", "height")


def parse_camera_document(text: str) -> dict:
    """Parse a camera JSON document without validating the pose.

    Returns a dict with float intrinsics, int extents and ``cam_to_world`` as a
    (4, 4) float64 array. Non-finite values survive so that callers can decide
    how to report them.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CameraFormatError(f"camera document is not JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CameraFormatError("camera document must be a JSON object")
    missing = [k for k in _INTRINSIC_KEYS if k not in doc]
    if missing:
        raise CameraFormatError(f"missing intrinsics: {', '.join(missing)}")
    if "cam_to_world" not in doc:
        raise CameraFormatError("missing cam_to_world")
    pose = doc["cam_to_world"]
    if not isinstance(pose, list) or len(pose) != 16:
        raise CameraFormatError("cam_to_world must be a list of 16 numbers")
    try:
        # json accepts NaN/Infinity literals; strings such as "nan" are accepted too
        pose_arr = np.array([float(x) for x in pose], dtype=np.float64).reshape(4, 4)
        out = {k: float(doc[k]) for k in ("fx", "fy", "cx", "cy")}
        out["width"] = int(doc["width"])
        out["height"] = int(doc["height"])
    except (TypeError, ValueError) as exc:
        raise CameraFormatError(f"non-numeric camera field: {exc}") from exc
    out["cam_to_world"] = pose_arr
    return out


def read_camera(text: str) -> CameraModel:
    doc = parse_camera_document(text)
    values = [doc[k] for k in ("fx", "fy", "cx", "cy")]
    if not all(math.isfinite(v) for v in values):
        raise InvalidPoseError("non-finite intrinsics")
    if not np.isfinite(doc["cam_to_world"]).all():
        raise InvalidPoseError("cam_to_world has non-finite entries")
    return CameraModel(**doc)


def write_camera(cam: CameraModel) -> str:
    doc = {
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "cam_to_world": [float(x) for x in cam.cam_to_world.reshape(-1)],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_camera(path: str | os.PathLike) -> CameraModel:
    return read_camera(Path(path).read_text())


# -- manifests ---------------------------------------------------------------


@dataclass
class FrameRecord:
    frame_id: str
    camera_file: str
    depth_file: str | None = None
    label_file: str | None = None
    split: str = "train"
    verdict: str | None = None
    reason: str | None = None
    origin: tuple[float, float, float] | None = None

    def to_dict(self) -> dict:
        d = {
            "frame_id": self.frame_id,
            "camera_file": self.camera_file,
            "depth_file": self.depth_file,
            "label_file": self.label_file,
            "split": self.split,
            "verdict": self.verdict,
            "reason": self.reason,
            "origin": None if self.origin is None else [float(x) for x in self.origin],
        }
        return d


@dataclass
class DatasetManifest:
    scene_id: str
    seed: int
    frames: list[FrameRecord] = field(default_factory=list)
    grid: dict | None = None

    def __post_init__(self):
        if self.seed < 0:
            raise ManifestError("seed must be an unsigned integer")
        ids = [f.frame_id for f in self.frames]
        if len(set(ids)) != len(ids):
            raise ManifestError(f"duplicate frame ids in scene {self.scene_id}")
        for f in self.frames:
            if f.split not in ("train", "val"):
                raise ManifestError(f"frame {f.frame_id}: split must be train or val")
            for p in (f.camera_file, f.depth_file, f.label_file):
                if p is not None and (os.path.isabs(p) or p.startswith(("/", "\\"))):
                    raise ManifestError(f"frame {f.frame_id}: path {p!r} is not relative")

    def to_json(self) -> str:
        doc = {
            "scene_id": self.scene_id,
            "seed": int(self.seed),
            "grid": self.grid,
            "frames": [f.to_dict() for f in self.frames],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            doc = json.loads(text)
            frames = []
            for fd in doc["frames"]:
                origin = fd.get("origin")
                frames.append(
                    FrameRecord(
                        frame_id=fd["frame_id"],
                        camera_file=fd["camera_file"],
                        depth_file=fd.get("depth_file"),
                        label_file=fd.get("label_file"),
                        split=fd.get("split", "train"),
                        verdict=fd.get("verdict"),
                        reason=fd.get("reason"),
                        origin=None if origin is None else tuple(origin),
                    )
                )
            return cls(scene_id=doc["scene_id"], seed=int(doc["seed"]), frames=frames, grid=doc.get("grid"))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ManifestError(f"malformed manifest: {exc}") from exc
