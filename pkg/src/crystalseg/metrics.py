"""Quality-control metrics for crystal instance segmentation.

Per-image statistics feed three dataset metrics:

* counting accuracy ``1 - mean(|cnt_pred - cnt_gt| / cnt_gt)``
* coverage error ``mean(|cov_pred - cov_gt| / cov_gt)``
* size error ``mean(|msize_pred - msize_gt|)`` in microns

plus AP and recall at IoU 0.5 (crystals only, pooled over the dataset) and
a 4x4 confusion matrix over crystal / hard_mimic / air_bubble / background.

Metrics that cannot be computed are reported as ``None``; the images that
were excluded from a metric are listed with the reason.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .pipeline import Instance, InstanceSet
from .raster import BitMask

CONFUSION_LABELS = ("crystal", "hard_mimic", "air_bubble", "background")
BACKGROUND = 3


@dataclass
class ImageStats:
    image_id: str
    cnt_pred: int
    cnt_gt: int
    cov_pred: int | None = None
    cov_gt: int | None = None
    msize_pred: float | None = None
    msize_gt: float | None = None


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_pred: list[int] = field(default_factory=list)
    unmatched_gt: list[int] = field(default_factory=list)


@dataclass
class MetricsReport:
    cnt_acc: float | None
    cov_err: float | None
    size_err: float | None
    map50: float | None
    recall50: float | None
    confusion: np.ndarray | None
    n_images: int
    per_image: list[ImageStats] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    timing: dict[str, float] = field(default_factory=dict)

    @property
    def confusion_normalized(self) -> np.ndarray | None:
        if self.confusion is None:
            return None
        return normalize_rows(self.confusion)

    def to_json(self) -> str:
        def opt(v, scale=1.0):
            return None if v is None else v * scale

        doc = {
            "cnt_acc": self.cnt_acc,
            "cov_err_pct": opt(self.cov_err, 100.0),
            "size_err_um": self.size_err,
            "map50": self.map50,
            "recall50": self.recall50,
            "confusion_labels": list(CONFUSION_LABELS),
            "confusion": None if self.confusion is None else self.confusion.tolist(),
            "confusion_normalized": (None if self.confusion is None
                                     else self.confusion_normalized.tolist()),
            "n_images": self.n_images,
            "skipped": self.skipped,
            "timing_s": self.timing,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def per_image_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image_id", "cnt_pred", "cnt_gt", "cov_pred", "cov_gt", "msize_pred", "msize_gt"])
        for s in self.per_image:
            w.writerow([
                s.image_id, s.cnt_pred, s.cnt_gt,
                "" if s.cov_pred is None else s.cov_pred,
                "" if s.cov_gt is None else s.cov_gt,
                "" if s.msize_pred is None else f"{s.msize_pred:.6f}",
                "" if s.msize_gt is None else f"{s.msize_gt:.6f}",
            ])
        return buf.getvalue()


def normalize_rows(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    sums = m.sum(axis=1, keepdims=True)
    return np.divide(m, sums, out=np.zeros_like(m), where=sums > 0)


# pixel-level measures

def mask_iou(a: BitMask, b: BitMask) -> float:
    area_a, area_b = a.area, b.area
    if area_a == 0 and area_b == 0:
        return 0.0
    x0, y0 = max(a.x0, b.x0), max(a.y0, b.y0)
    x1 = min(a.x0 + a.width, b.x0 + b.width)
    y1 = min(a.y0 + a.height, b.y0 + b.height)
    inter = 0
    if x1 > x0 and y1 > y0:
        sa = a.bits[y0 - a.y0:y1 - a.y0, x0 - a.x0:x1 - a.x0]
        sb = b.bits[y0 - b.y0:y1 - b.y0, x0 - b.x0:x1 - b.x0]
        inter = int(np.count_nonzero(sa & sb))
    return inter / (area_a + area_b - inter)


def union_area(masks: Sequence[BitMask]) -> int:
    """Pixel count of the union of masks (overlaps counted once)."""
    masks = [m for m in masks if m.area]
    if not masks:
        return 0
    x0 = min(m.x0 for m in masks)
    y0 = min(m.y0 for m in masks)
    x1 = max(m.x0 + m.width for m in masks)
    y1 = max(m.y0 + m.height for m in masks)
    canvas = np.zeros((y1 - y0, x1 - x0), dtype=bool)
    for m in masks:
        canvas[m.y0 - y0:m.y0 - y0 + m.height, m.x0 - x0:m.x0 - x0 + m.width] |= m.bits
    return int(np.count_nonzero(canvas))


def equivalent_diameter(area: float) -> float:
    return 2.0 * math.sqrt(area / math.pi)


def mean_size(masks: Sequence[BitMask], microns_per_pixel: float = 1.0) -> float:
    """Mean equivalent circular diameter in microns; 0 for no masks."""
    if not masks:
        return 0.0
    return microns_per_pixel * sum(equivalent_diameter(m.area) for m in masks) / len(masks)


def image_stats(pred: InstanceSet, gt: InstanceSet, microns_per_pixel: float = 1.0) -> ImageStats:
    pc = [i.mask for i in pred.crystals()]
    gc = [i.mask for i in gt.crystals()]
    return ImageStats(
        gt.image_id or pred.image_id,
        cnt_pred=len(pc), cnt_gt=len(gc),
        cov_pred=union_area(pc), cov_gt=union_area(gc),
        msize_pred=mean_size(pc, microns_per_pixel),
        msize_gt=mean_size(gc, microns_per_pixel),
    )


# matching

def _confidence_order(instances: Iterable[Instance]) -> list[Instance]:
    return sorted(instances, key=lambda i: (-i.confidence, i.id))


def _greedy_match(preds: list[Instance], gts: list[Instance], iou_fn, thresh: float) -> MatchResult:
    res = MatchResult()
    taken: set[int] = set()
    for p in _confidence_order(preds):
        best, best_key = None, (-1.0, False)
        for g in sorted(gts, key=lambda g: g.id):
            if g.id in taken:
                continue
            v = iou_fn(p, g)
            # equal IoU: a same-class partner beats a lower id
            key = (v, g.cls == p.cls)
            if v >= thresh and key > best_key:
                best, best_key = g, key
        if best is None:
            res.unmatched_pred.append(p.id)
        else:
            taken.add(best.id)
            res.pairs.append((p.id, best.id, best_key[0]))
    res.unmatched_gt = [g.id for g in sorted(gts, key=lambda g: g.id) if g.id not in taken]
    return res


def match_instances(pred: InstanceSet, gt: InstanceSet, thresh: float = 0.5) -> MatchResult:
    """Greedy confidence-ordered mask matching of crystal instances.

    Predictions are visited by descending confidence (ties: lower id) and
    each takes the free ground-truth crystal with the highest IoU that
    reaches ``thresh`` (ties: same class first, then lower ground-truth id).
    """
    return _greedy_match(pred.crystals(), gt.crystals(), lambda p, g: mask_iou(p.mask, g.mask), thresh)


def cnt_acc(stats: Sequence[ImageStats], skipped: list | None = None) -> float | None:
    terms = []
    for s in stats:
        if s.cnt_gt == 0:
            if skipped is not None:
                skipped.append({"image_id": s.image_id, "metric": "cnt_acc", "reason": "no ground-truth crystals"})
            continue
        terms.append(abs(s.cnt_pred - s.cnt_gt) / s.cnt_gt)
    if not terms:
        return None
    return 1.0 - sum(terms) / len(terms)


def cov_err(stats: Sequence[ImageStats], skipped: list | None = None) -> float | None:
    terms = []
    for s in stats:
        if s.cov_gt is None:
            continue
        if s.cov_gt == 0:
            if skipped is not None:
                skipped.append({"image_id": s.image_id, "metric": "cov_err", "reason": "zero ground-truth coverage"})
            continue
        terms.append(abs(s.cov_pred - s.cov_gt) / s.cov_gt)
    return sum(terms) / len(terms) if terms else None


def size_err(stats: Sequence[ImageStats], skipped: list | None = None) -> float | None:
    terms = []
    for s in stats:
        if s.msize_gt is None:
            continue
        if s.cnt_gt == 0:
            if skipped is not None:
                skipped.append({"image_id": s.image_id, "metric": "size_err", "reason": "no ground-truth crystals"})
            continue
        terms.append(abs(s.msize_pred - s.msize_gt))
    return sum(terms) / len(terms) if terms else None


def average_precision_50(scored: Sequence[tuple[float, bool]], n_gt: int) -> float | None:
    """All-point interpolated AP.

    ``scored`` holds ``(confidence, matched)`` per prediction; the sort is
    stable, so equal confidences keep the order given.
    """
    if n_gt == 0:
        return None
    if not scored:
        return 0.0
    order = sorted(range(len(scored)), key=lambda i: -scored[i][0])
    hits = np.array([scored[i][1] for i in order], dtype=float)
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # recall rises by exactly 1/n_gt at each hit and nowhere else
    return float(envelope[hits > 0].sum() / n_gt)


def recall_50(n_matched: int, n_gt: int) -> float | None:
    return None if n_gt == 0 else n_matched / n_gt


def confusion_matrix(pred: InstanceSet, gt: InstanceSet, thresh: float = 0.5) -> np.ndarray:
    """4x4 counts indexed ``[true class, predicted class]``; index 3 is background.

    Instances of every class are matched on box IoU, ignoring class.
    """
    m = np.zeros((4, 4), dtype=np.int64)
    res = _greedy_match(list(pred.instances), list(gt.instances), lambda p, g: p.box.iou(g.box), thresh)
    pcls = {i.id: int(i.cls) for i in pred.instances}
    gcls = {i.id: int(i.cls) for i in gt.instances}
    for p, g, _ in res.pairs:
        m[gcls[g], pcls[p]] += 1
    for g in res.unmatched_gt:
        m[gcls[g], BACKGROUND] += 1
    for p in res.unmatched_pred:
        m[BACKGROUND, pcls[p]] += 1
    return m


def evaluate(pairs: Sequence[tuple[InstanceSet, InstanceSet]], microns_per_pixel: float = 1.0,
             iou_thresh: float = 0.5) -> MetricsReport:
    """Dataset metrics over ``(prediction, ground truth)`` pairs, in the given order."""
    stats: list[ImageStats] = []
    scored: list[tuple[float, bool]] = []
    n_gt = n_matched = 0
    confusion = np.zeros((4, 4), dtype=np.int64)
    for pred, gt in pairs:
        stats.append(image_stats(pred, gt, microns_per_pixel))
        res = match_instances(pred, gt, iou_thresh)
        matched = {p for p, _, _ in res.pairs}
        for inst in _confidence_order(pred.crystals()):
            scored.append((inst.confidence, inst.id in matched))
        n_gt += len(gt.crystals())
        n_matched += len(res.pairs)
        confusion += confusion_matrix(pred, gt, iou_thresh)
    skipped: list[dict] = []
    report = MetricsReport(
        cnt_acc=cnt_acc(stats, skipped),
        cov_err=cov_err(stats, skipped),
        size_err=size_err(stats, skipped),
        map50=average_precision_50(scored, n_gt),
        recall50=recall_50(n_matched, n_gt),
        confusion=confusion,
        n_images=len(stats),
        per_image=stats,
        skipped=skipped,
    )
    if n_gt == 0:
        skipped.append({"image_id": None, "metric": "map50/recall50", "reason": "no ground-truth crystals in dataset"})
    return report


def evaluate_counts(counts: Sequence[tuple[str, int, int]]) -> MetricsReport:
    """Counting accuracy only, from ``(image_id, cnt_pred, cnt_gt)`` rows."""
    stats = [ImageStats(i, p, g) for i, p, g in counts]
    skipped: list[dict] = []
    return MetricsReport(
        cnt_acc=cnt_acc(stats, skipped), cov_err=None, size_err=None,
        map50=None, recall50=None, confusion=None,
        n_images=len(stats), per_image=stats, skipped=skipped,
    )
