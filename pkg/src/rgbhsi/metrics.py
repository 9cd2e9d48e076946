"""Per-class IoU, mIoU, median-frequency class weights and evaluation reports."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ShapeMismatch, Undefined
from .imaging import CLASS_LABELS, CLASS_NAMES, LabelMask

log = logging.getLogger(__name__)

DEFAULT_CLASSES = tuple(range(1, len(CLASS_NAMES) + 1))
REPORT_SCHEMA = "rgbhsi.eval/1"


def _ids(mask) -> np.ndarray:
    return mask.class_ids if isinstance(mask, LabelMask) else np.asarray(mask)


def class_counts(pred, gt, classes: Sequence[int] = DEFAULT_CLASSES):
    """Per-class intersection and union pixel counts."""
    p, g = _ids(pred), _ids(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs ground truth {g.shape}")
    inter = np.zeros(len(classes), dtype=np.int64)
    union = np.zeros(len(classes), dtype=np.int64)
    for i, c in enumerate(classes):
        pc, gc = p == c, g == c
        inter[i] = np.count_nonzero(pc & gc)
        union[i] = np.count_nonzero(pc | gc)
    return inter, union


def iou_per_class(pred, gt, classes: Sequence[int] = DEFAULT_CLASSES) -> dict:
    """IoU for every class; ``None`` where the class is absent from both masks."""
    inter, union = class_counts(pred, gt, classes)
    return {c: (float(i / u) if u else None) for c, i, u in zip(classes, inter, union)}


def miou(ious) -> float:
    """Unweighted mean over present (non-None) classes."""
    vals = list(ious.values()) if isinstance(ious, Mapping) else list(ious)
    vals = [v for v in vals if v is not None and not (isinstance(v, float) and np.isnan(v))]
    if not vals:
        raise Undefined("mIoU undefined: no class present")
    return float(np.mean(vals))


class IoUAccumulator:
    """Dataset-level IoU from summed intersections and unions."""

    def __init__(self, classes: Sequence[int] = DEFAULT_CLASSES):
        self.classes = tuple(classes)
        self.inter = np.zeros(len(self.classes), dtype=np.int64)
        self.union = np.zeros(len(self.classes), dtype=np.int64)
        self.gt_pixels = np.zeros(len(self.classes), dtype=np.int64)

    def add(self, pred, gt) -> dict:
        i, u = class_counts(pred, gt, self.classes)
        self.inter += i
        self.union += u
        g = _ids(gt)
        self.gt_pixels += np.array([np.count_nonzero(g == c) for c in self.classes])
        return {c: (float(a / b) if b else None) for c, a, b in zip(self.classes, i, u)}

    def merge(self, other: "IoUAccumulator") -> None:
        self.inter += other.inter
        self.union += other.union
        self.gt_pixels += other.gt_pixels

    def ious(self) -> dict:
        return {c: (float(i / u) if u else None) for c, i, u in zip(self.classes, self.inter, self.union)}


# ----------------------------------------------------------------------------
# class weights


@dataclass
class ClassWeights:
    weights: dict  # class -> weight
    frequencies: dict  # class -> pixel frequency
    excluded: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def weights_from_frequencies(freqs: Mapping[int, float]) -> ClassWeights:
    """w_c = median(freq) / freq_c over classes with nonzero frequency."""
    present = {c: float(f) for c, f in freqs.items() if f and f > 0}
    excluded = sorted(c for c in freqs if c not in present)
    warnings = [f"class {c} has no labeled pixels; excluded from weighting" for c in excluded]
    for w in warnings:
        log.warning(w)
    if not present:
        raise Undefined("no class has labeled pixels")
    med = float(np.median(list(present.values())))
    return ClassWeights({c: med / f for c, f in present.items()}, present, excluded, warnings)


def median_freq_weights(masks: Iterable, classes: Sequence[int] = DEFAULT_CLASSES) -> ClassWeights:
    """Median-frequency balancing over a split.

    freq_c is the pixel count of class c divided by the total pixel count of
    the images in which c appears.
    """
    count = np.zeros(len(classes), dtype=np.int64)
    image_pixels = np.zeros(len(classes), dtype=np.int64)
    for m in masks:
        ids = _ids(m)
        for i, c in enumerate(classes):
            n = np.count_nonzero(ids == c)
            if n:
                count[i] += n
                image_pixels[i] += ids.size
    freqs = {c: (count[i] / image_pixels[i] if image_pixels[i] else 0.0) for i, c in enumerate(classes)}
    return weights_from_frequencies(freqs)


# ----------------------------------------------------------------------------
# reports


def class_label(c: int) -> str:
    return CLASS_LABELS[CLASS_NAMES[c - 1]] if 1 <= c <= len(CLASS_NAMES) else f"class {c}"


@dataclass
class EvalReport:
    method: str
    classes: tuple
    iou: dict  # class -> IoU or None
    miou: Optional[float]
    intersection: dict = field(default_factory=dict)
    union: dict = field(default_factory=dict)
    gt_pixels: dict = field(default_factory=dict)
    per_sample: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "method": self.method,
            "classes": {str(c): class_label(c) for c in self.classes},
            "iou": {str(c): self.iou[c] for c in self.classes},
            "miou": self.miou,
            "pixels": {
                str(c): {
                    "intersection": int(self.intersection.get(c, 0)),
                    "union": int(self.union.get(c, 0)),
                    "gt": int(self.gt_pixels.get(c, 0)),
                }
                for c in self.classes
            },
            "per_sample": self.per_sample,
            "skipped": self.skipped,
            "skip_count": len(self.skipped),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EvalReport":
        classes = tuple(int(c) for c in doc["iou"])
        return cls(
            method=doc["method"],
            classes=classes,
            iou={int(c): v for c, v in doc["iou"].items()},
            miou=doc.get("miou"),
            intersection={int(c): v["intersection"] for c, v in doc.get("pixels", {}).items()},
            union={int(c): v["union"] for c, v in doc.get("pixels", {}).items()},
            gt_pixels={int(c): v["gt"] for c, v in doc.get("pixels", {}).items()},
            per_sample=doc.get("per_sample", []),
            skipped=doc.get("skipped", []),
        )

    def to_table(self) -> str:
        return render_table([(self.method, self.iou, self.miou)], self.classes)


def render_table(rows, classes: Sequence[int] = DEFAULT_CLASSES, percent: bool = True) -> str:
    """Aligned text table: one row per method, per-class IoU then mIoU.

    ``rows`` holds (method, {class: IoU or None}, mIoU or None). Values are
    fractions unless ``percent=False`` says they are already percentages.
    """
    headers = ["Method"] + [class_label(c) for c in classes] + ["mIoU"]

    def fmt(v):
        if v is None:
            return "-"
        return f"{v * 100:.1f}" if percent else f"{v:.1f}"

    body = [[m] + [fmt(iou.get(c)) for c in classes] + [fmt(mi)] for m, iou, mi in rows]
    widths = [max(len(r[i]) for r in [headers] + body) for i in range(len(headers))]
    lines = []
    for r in [headers] + body:
        cells = [r[0].ljust(widths[0])] + [v.rjust(w) for v, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def evaluate_masks(samples: Iterable, method: str, classes: Sequence[int] = DEFAULT_CLASSES) -> EvalReport:
    """Score (sample_id, pred, gt) triples; ``pred=None`` marks a missing prediction."""
    acc = IoUAccumulator(classes)
    per_sample = []
    skipped = []
    for sid, pred, gt in samples:
        if pred is None:
            skipped.append(sid)
            continue
        ious = acc.add(pred, gt)
        per_sample.append({"id": sid, "iou": {str(c): v for c, v in ious.items()}})
    ious = acc.ious()
    try:
        mi = miou(ious)
    except Undefined:
        mi = None
    return EvalReport(
        method=method,
        classes=tuple(classes),
        iou=ious,
        miou=mi,
        intersection=dict(zip(classes, acc.inter.tolist())),
        union=dict(zip(classes, acc.union.tolist())),
        gt_pixels=dict(zip(classes, acc.gt_pixels.tolist())),
        per_sample=per_sample,
        skipped=skipped,
    )


def evaluate_dataset(
    pred_dir,
    gt_dir,
    sample_ids: Optional[Sequence[str]] = None,
    method: str = "prediction",
    classes: Sequence[int] = DEFAULT_CLASSES,
) -> EvalReport:
    """Score ``<pred_dir>/<id>.png`` against ``<gt_dir>/<id>.png`` class-ID masks.

    Without ``sample_ids`` every ground-truth PNG is a sample. Missing
    predictions are listed in ``skipped``.
    """
    from .io import read_mask

    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    if sample_ids is None:
        sample_ids = sorted(p.stem for p in gt_dir.glob("*.png"))

    def gen():
        for sid in sample_ids:
            gt = read_mask(gt_dir / f"{sid}.png")
            pp = pred_dir / f"{sid}.png"
            if not pp.exists():
                log.warning("no prediction for %s", sid)
                yield sid, None, gt
                continue
            yield sid, read_mask(pp), gt

    return evaluate_masks(gen(), method, classes)
