"""
Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error. Diagnostics go to stderr
as key=value lines.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import depthbin, tensorio
from .depthbin import DepthBinSpec
from .errors import DomainError
from .labelgen import (
    LabeledPointSet,
    LabelGenConfig,
    SceneBounds,
    generate_frame_label,
    sample_frames,
    split_frames,
)
from .lifting import MODES, SCALES, FeaturePyramid, fuse, project_voxels
from .metrics import ConfusionMatrix, confusion, report, report_csv
from .voxel import GRID_PRESETS, GridSpec

log = logging.getLogger("indoorocc")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    def __init__(self, stage: str, msg: str):
        super().__init__(msg)
        self.stage = stage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("OCC_THREADS", "1")))
    except ValueError:
        return 1


def _fmt_num(x: float) -> str:
    return np.format_float_positional(float(x), trim="-")


def _stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except FileNotFoundError as exc:
        raise DataError(stage, f"missing file {exc.filename}") from exc
    except (DomainError, tensorio.TensorIOError, tensorio.CameraFormatError,
            tensorio.ManifestError, OSError, ValueError) as exc:
        raise DataError(stage, str(exc)) from exc


def _add_depth_flags(p, required: bool = False):
    note = "" if required else " (default %(default)s; placeholder, not a published training value)"
    p.add_argument("--d-min", type=float, required=required,
                   default=None if required else depthbin.DEFAULT_D_MIN, help="nearest depth, meters" + note)
    p.add_argument("--d-max", type=float, required=required,
                   default=None if required else depthbin.DEFAULT_D_MAX, help="farthest depth, meters" + note)
    p.add_argument("--n-bins", type=int, required=required,
                   default=None if required else depthbin.DEFAULT_N_BINS, help="number of depth bins" + note)


def _depth_spec(args) -> DepthBinSpec:
    try:
        return DepthBinSpec(args.d_min, args.d_max, args.n_bins)
    except DomainError as exc:
        raise UsageError(str(exc)) from exc


def _grid_spec(args) -> GridSpec:
    base = GRID_PRESETS[args.grid]
    try:
        return GridSpec(
            tuple(args.dims) if args.dims else base.dims,
            tuple(args.origin) if args.origin else base.origin,
            args.voxel_size if args.voxel_size is not None else base.voxel_size,
        )
    except DomainError as exc:
        raise UsageError(str(exc)) from exc


def _add_grid_flags(p, default_preset: str, origin: bool = True):
    p.add_argument("--grid", choices=sorted(GRID_PRESETS), default=default_preset,
                   help="grid preset (default %(default)s)")
    p.add_argument("--dims", type=int, nargs=3, metavar=("X", "Y", "Z"), help="override grid extents")
    if origin:
        p.add_argument("--origin", type=float, nargs=3, metavar=("X", "Y", "Z"), help="grid min corner, meters")
    p.add_argument("--voxel-size", type=float, help="override voxel edge length, meters")


# -- depth-bins -----------------------------------------------------------------


def cmd_depth_bins(args) -> int:
    spec = _depth_spec(args)
    print("edges:", " ".join(_fmt_num(e) for e in depthbin.bin_edges(spec)))
    print("centers:", " ".join(_fmt_num(c) for c in depthbin.bin_centers(spec)))
    print(f"delta={_fmt_num(spec.delta)}")
    if args.depth:
        if not args.out:
            raise UsageError("--depth needs --out")
        depth = _stage("read_depth", tensorio.load_tensor, args.depth)
        if depth.ndim != 2:
            raise DataError("read_depth", f"depth map must be rank 2, got {depth.shape}")
        if args.emit == "index":
            mask = depthbin.valid_depth(depth)
            idx = depthbin.bin_index(spec, np.where(mask, depth, spec.d_min))
            out = np.where(mask, idx, -1).astype(np.int64)
        else:
            out, mask = depthbin.one_hot_target(depth, spec)
        _stage("write", tensorio.save_tensor, args.out, out)
        log.info("wrote=%s valid_pixels=%d", args.out, int(mask.sum()))
    return EXIT_OK


# -- lift ---------------------------------------------------------------------------


def _pmap(fn, items, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _derive_dists(dist1: np.ndarray, scales, threads: int) -> dict:
    """Pool the scale-1 distribution for each scale; bins are independent, so slices run in parallel."""
    n = dist1.shape[0]
    step = max(1, -(-n // (2 * threads)))
    tasks = [(k, lo) for k in scales for lo in range(0, n, step)]
    parts = _pmap(lambda t: _stage("downsample_dist", depthbin.downsample_distribution,
                                   dist1[t[1]:t[1] + step], t[0]), tasks, threads)
    return {k: np.concatenate([p for (kk, _), p in zip(tasks, parts) if kk == k]) for k in scales}


def cmd_lift(args) -> int:
    spec = _depth_spec(args)
    grid = _grid_spec(args)
    cam = _stage("read_camera", tensorio.load_camera, args.camera)
    for k in SCALES:
        path = getattr(args, f"feat{k}")
        if not Path(path).is_file():
            raise DataError("read_features", f"missing feature file for scale {k}: {path}")
    reads = [("read_features", getattr(args, f"feat{k}")) for k in SCALES] + [("read_dist", args.dist)]
    reads += [("read_dist", getattr(args, f"dist{k}")) for k in SCALES[1:] if getattr(args, f"dist{k}")]
    loaded = _pmap(lambda r: _stage(r[0], tensorio.load_tensor, r[1]), reads, args.threads)
    levels = dict(zip(SCALES, loaded))
    dist1 = loaded[len(SCALES)]
    overrides = iter(loaded[len(SCALES) + 1:])
    dists = {1: dist1}
    explicit = {k: next(overrides) for k in SCALES[1:] if getattr(args, f"dist{k}")}
    dists.update(_derive_dists(dist1, [k for k in SCALES[1:] if k not in explicit], args.threads))
    dists.update(explicit)
    pyramid = _stage("features", FeaturePyramid.from_levels, levels)
    t0 = time.perf_counter()
    proj = project_voxels(cam, grid)
    volume = _stage("fuse", fuse, pyramid, dists, proj, spec, args.mode, args.threads)
    elapsed = time.perf_counter() - t0
    _stage("write", tensorio.save_tensor, args.out, volume)
    log.info("valid_fraction=%.6f dims=%s channels=%d fuse_seconds=%.3f threads=%d",
             proj.valid_fraction(), "x".join(map(str, grid.dims)), pyramid.channels, elapsed, args.threads)
    return EXIT_OK


# -- gen-labels ----------------------------------------------------------------------


def _natural_key(s: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s)]


def cmd_gen_labels(args) -> int:
    scene = Path(args.scene_dir)
    bounds_path = scene / "bounds.json"
    if not bounds_path.is_file():
        raise UsageError(f"scene bounds file not found: {bounds_path}")
    try:
        b = json.loads(bounds_path.read_text())
        bounds = SceneBounds(tuple(b["min"]), tuple(b["max"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed bounds file {bounds_path}: {exc}") from exc
    meta = {}
    if (scene / "scene.json").is_file():
        meta = _stage("read_scene", lambda: json.loads((scene / "scene.json").read_text()))
    scene_id = meta.get("scene_id", scene.name)
    src_size = args.source_voxel_size or meta.get("source_voxel_size")
    if not src_size:
        raise UsageError("source voxel size unknown: pass --source-voxel-size or set it in scene.json")
    table = _stage("read_points", tensorio.load_tensor, scene / "points.occt")
    points = _stage("read_points", LabeledPointSet.from_tensor, table, float(src_size))

    base = GRID_PRESETS[args.grid]
    config = LabelGenConfig(
        dims=tuple(args.dims) if args.dims else base.dims,
        voxel_size=args.voxel_size or base.voxel_size,
        max_dist=args.max_dist,
        floor_height=args.floor_height,
        seed=args.seed,
        n_frames=args.n_frames,
    )
    cam_files = sorted((scene / "cameras").glob("*.json"), key=lambda p: _natural_key(p.stem))
    if not cam_files:
        raise DataError("read_cameras", f"no camera files in {scene / 'cameras'}")
    by_id = {p.stem: p for p in cam_files}
    # sampling and splitting happen before the per-frame fan-out
    selected = sample_frames(list(by_id), config.n_frames, config.seed)
    train, _ = split_frames(selected, config.train_ratio, config.seed)
    train = set(train)

    out = Path(args.out)
    label_dir = out / "labels"

    def run(frame_id: str):
        try:
            doc = tensorio.parse_camera_document(by_id[frame_id].read_text())
        except (tensorio.CameraFormatError, OSError) as exc:
            log.warning("frame=%s stage=read_camera error=%s", frame_id, exc)
            return frame_id, None, "reject", "invalid_pose", None
        pose = doc.pop("cam_to_world")
        try:
            res = generate_frame_label(points, bounds, frame_id, pose, doc, config)
        except DomainError as exc:
            log.warning("frame=%s stage=camera error=%s", frame_id, exc)
            return frame_id, None, "reject", "invalid_pose", None
        label_file = None
        if res.grid is not None:
            path = label_dir / f"{frame_id}.occt"
            tensorio.save_label_grid(path, res.grid.labels)
            label_file = os.path.relpath(path, out)
        return frame_id, label_file, res.decision.verdict, res.decision.reason, res.origin

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(run, selected))
    else:
        results = [run(f) for f in selected]

    frames = []
    for frame_id, label_file, verdict, reason, origin in results:
        depth = scene / "depth" / f"{frame_id}.occt"
        frames.append(tensorio.FrameRecord(
            frame_id=frame_id,
            camera_file=os.path.relpath(by_id[frame_id], out),
            depth_file=os.path.relpath(depth, out) if depth.is_file() else None,
            label_file=label_file,
            split="train" if frame_id in train else "val",
            verdict=verdict,
            reason=reason,
            origin=origin,
        ))
    grid_meta = {"dims": list(config.dims), "voxel_size": config.voxel_size,
                 "max_dist": config.max_dist if config.max_dist is not None else points.default_max_dist,
                 "floor_height": config.floor_height}
    manifest = tensorio.DatasetManifest(scene_id=scene_id, seed=config.seed, frames=frames, grid=grid_meta)
    tensorio.atomic_write_bytes(out / "manifest.json", manifest.to_json().encode())

    verdicts = Counter(r[2] for r in results)
    reasons = Counter(r[3] for r in results if r[2] == "reject")
    n_train = sum(1 for f in frames if f.split == "train")
    parts = [f"kept={verdicts['keep']}", f"rejected={verdicts['reject']}"]
    parts += [f"{k}={reasons[k]}" for k in sorted(reasons)]
    parts += [f"train={n_train}", f"val={len(frames) - n_train}"]
    print(" ".join(parts))
    return EXIT_OK


# -- eval ----------------------------------------------------------------------------


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise UsageError(f"not a directory: {d}")
    preds = {p.name for p in pred_dir.glob("*.occt")}
    gts = {p.name for p in gt_dir.glob("*.occt")}
    for name in sorted(preds ^ gts):
        log.warning("unmatched=%s side=%s", name, "pred" if name in preds else "gt")
    common = sorted(preds & gts, key=_natural_key)
    if not common:
        raise DataError("match", "no prediction/ground-truth file names in common")

    def one(name):
        pred = tensorio.load_label_grid(pred_dir / name)
        gt = tensorio.load_label_grid(gt_dir / name)
        return confusion(pred, gt)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            parts = _stage("evaluate", lambda: list(pool.map(one, common)))
    else:
        parts = _stage("evaluate", lambda: [one(n) for n in common])
    total = ConfusionMatrix()
    for c in parts:
        total = total + c
    name = args.name or pred_dir.name
    print(report({name: total}), end="")
    if args.csv:
        tensorio.atomic_write_bytes(args.csv, report_csv({name: total}).encode())
    log.info("files=%d ignored=%d", len(common), total.ignored)
    return EXIT_OK


# -- depth-loss ----------------------------------------------------------------------


def cmd_depth_loss(args) -> int:
    spec = _depth_spec(args)
    pred = _stage("read_pred", tensorio.load_tensor, args.pred)
    depth = _stage("read_depth", tensorio.load_tensor, args.depth)
    if pred.ndim != 3 or depth.ndim != 2:
        raise DataError("shapes", f"expected (n_bins, H, W) and (H, W), got {pred.shape} and {depth.shape}")
    if pred.shape[1:] != depth.shape:
        raise DataError("shapes", f"prediction extents {pred.shape[1:]} differ from depth map {depth.shape}")
    if pred.shape[0] != spec.n_bins:
        raise DataError("shapes", f"prediction has {pred.shape[0]} bins, spec has {spec.n_bins}")
    target, mask = depthbin.one_hot_target(depth, spec)
    loss = _stage("loss", depthbin.bce_depth_loss, pred, target, mask)
    print(f"loss={loss:.6f}")
    if args.grad:
        grad = depthbin.bce_depth_loss_grad(pred, target, mask)
        _stage("write", tensorio.save_tensor, args.grad, grad)
    return EXIT_OK


# -- wiring --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="indoorocc", description="Indoor occupancy lifting, label generation and evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("depth-bins", help="print depth bin edges; optionally bin a depth map")
    _add_depth_flags(p, required=True)
    p.add_argument("--depth", help="depth map tensor (H, W)")
    p.add_argument("--emit", choices=("index", "one-hot"), default="index")
    p.add_argument("--out", help="output tensor path")
    p.set_defaults(func=cmd_depth_bins)

    p = sub.add_parser("lift", help="lift a feature pyramid into a depth-weighted voxel volume")
    for k in SCALES:
        p.add_argument(f"--feat{k}", required=True, help=f"features at 1:{k}, (C, H/{k}, W/{k})")
    p.add_argument("--dist", required=True, help="full-resolution depth distribution (n_bins, H, W)")
    for k in SCALES[1:]:
        p.add_argument(f"--dist{k}", help=f"explicit 1:{k} distribution (default: mean-pooled from --dist)")
    p.add_argument("--camera", required=True, help="camera JSON document")
    _add_grid_flags(p, "nyu")
    _add_depth_flags(p)
    p.add_argument("--mode", choices=MODES, default="nearest")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("gen-labels", help="generate per-frame voxel labels for one scene")
    p.add_argument("scene_dir")
    p.add_argument("--out", required=True)
    _add_grid_flags(p, "occscannet", origin=False)  # origin is placed per frame
    p.add_argument("--source-voxel-size", type=float, help="voxel size of the labeled point set")
    p.add_argument("--max-dist", type=float, help="label transfer cutoff (default: one source voxel diagonal)")
    p.add_argument("--floor-height", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-frames", type=int, default=100)
    p.add_argument("--threads", type=int, default=_default_threads())
    p.set_defaults(func=cmd_gen_labels)

    p = sub.add_parser("eval", help="score predicted label grids against ground truth")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("--csv", help="also write the table as CSV")
    p.add_argument("--name", help="row label (default: prediction directory name)")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("depth-loss", help="BCE between a predicted distribution and a depth map")
    p.add_argument("--pred", required=True)
    p.add_argument("--depth", required=True)
    _add_depth_flags(p)
    p.add_argument("--grad", help="write the analytic gradient here")
    p.set_defaults(func=cmd_depth_loss)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"indoorocc {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error command={args.command} stage={exc.stage} msg={exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
