"""Scene-completion metrics: occupancy IoU, per-class IoU and mIoU over pooled voxels."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DomainError, InvalidPredictionError
from .voxel import CLASS_NAMES, NUM_CLASSES, NUM_SEMANTIC, UNKNOWN, LabelGrid

COLUMNS = ("IoU",) + CLASS_NAMES + ("mIoU",)
UNDEFINED = "—"


def _labels(g) -> np.ndarray:
    return g.labels if isinstance(g, LabelGrid) else np.asarray(g)


@dataclass
class ConfusionMatrix:
    """Counts indexed [gt class, pred class] over 0..11, plus voxels skipped for gt = unknown."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64))
    ignored: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.ignored

    def accumulate(self, pred, gt) -> "ConfusionMatrix":
        return self + confusion(pred, gt)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts, self.ignored + other.ignored)

    def class_iou(self, c: int) -> float | None:
        return class_iou(self, c)

    def miou(self) -> float:
        return miou(self)

    def occupancy_iou(self) -> float | None:
        return occupancy_iou(self)


def confusion(pred, gt) -> ConfusionMatrix:
    p = _labels(pred)
    g = _labels(gt)
    if p.shape != g.shape:
        raise DomainError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    g = g.reshape(-1).astype(np.int64)
    p = p.reshape(-1).astype(np.int64)
    keep = g != UNKNOWN
    if ((g[keep] < 0) | (g[keep] >= NUM_CLASSES)).any():
        raise DomainError("ground truth holds values outside 0..11 and 255")
    pk = p[keep]
    if ((pk < 0) | (pk >= NUM_CLASSES)).any():
        raise InvalidPredictionError("predictions must lie in 0..11")
    flat = np.bincount(g[keep] * NUM_CLASSES + pk, minlength=NUM_CLASSES * NUM_CLASSES)
    return ConfusionMatrix(flat.reshape(NUM_CLASSES, NUM_CLASSES).astype(np.int64), int((~keep).sum()))


def accumulate(conf: ConfusionMatrix | None, pred, gt) -> ConfusionMatrix:
    return (conf or ConfusionMatrix()).accumulate(pred, gt)


def class_iou(conf: ConfusionMatrix, c: int) -> float | None:
    """TP / (TP + FP + FN) for class ``c``; None when the class never occurs."""
    m = conf.counts
    tp = int(m[c, c])
    fp = int(m[:, c].sum()) - tp
    fn = int(m[c, :].sum()) - tp
    denom = tp + fp + fn
    return None if denom == 0 else tp / denom


def miou(conf: ConfusionMatrix) -> float:
    # fixed denominator: classes that never occur count as 0
    return sum(class_iou(conf, c) or 0.0 for c in range(1, NUM_SEMANTIC + 1)) / NUM_SEMANTIC


def occupancy_iou(conf: ConfusionMatrix) -> float | None:
    m = conf.counts
    tp = int(m[1:, 1:].sum())
    fp = int(m[0, 1:].sum())
    fn = int(m[1:, 0].sum())
    denom = tp + fp + fn
    return None if denom == 0 else tp / denom


def summary_row(conf: ConfusionMatrix) -> dict[str, float | None]:
    row = {"IoU": occupancy_iou(conf)}
    for c, name in enumerate(CLASS_NAMES, start=1):
        row[name] = class_iou(conf, c)
    row["mIoU"] = miou(conf)
    return row


def _fmt(x: float | None) -> str:
    return UNDEFINED if x is None else f"{100.0 * x:.2f}"


def _rows(results: Mapping[str, ConfusionMatrix | Mapping]) -> list[tuple[str, list[str]]]:
    out = []
    for name, res in results.items():
        row = summary_row(res) if isinstance(res, ConfusionMatrix) else res
        out.append((name, [_fmt(row[c]) for c in COLUMNS]))
    return out


def report(results: Mapping[str, ConfusionMatrix | Mapping]) -> str:
    """Aligned text table, one row per method, values in percent."""
    rows = _rows(results)
    header = ["Method"] + list(COLUMNS)
    table = [header] + [[name] + vals for name, vals in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = []
    for r in table:
        first = r[0].ljust(widths[0])
        rest = [v.rjust(w) for v, w in zip(r[1:], widths[1:])]
        lines.append("  ".join([first] + rest))
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def report_csv(results: Mapping[str, ConfusionMatrix | Mapping]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method"] + list(COLUMNS))
    for name, vals in _rows(results):
        w.writerow([name] + ["" if v == UNDEFINED else v for v in vals])
    return buf.getvalue()
