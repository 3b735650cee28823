"""Detection records: text-format ingest and a classical fallback detector.

The text format is one object per line::

    class_id x_center y_center width height [confidence]

with geometry normalized to [0, 1] and class ids 0=crystal, 1=hard_mimic,
2=air_bubble. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import ndimage

from .morphology import Connectivity, connected_components, percentile_binarize
from .raster import BBox, GrayImage, ObjectClass


class DetectionParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Detection:
    cls: ObjectClass
    box: BBox
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.box.w < 1 or self.box.h < 1:
            raise ValueError(f"box {self.box} has no area")


@dataclass
class DetectionSet:
    image_id: str
    detections: list[Detection] = field(default_factory=list)

    def __len__(self):
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def parse_detections(lines: Iterable[str] | str, img_w: int, img_h: int,
                     image_id: str = "") -> DetectionSet:
    """Parse normalized detector output into pixel boxes clamped to the image."""
    if isinstance(lines, str):
        lines = lines.splitlines()
    out = DetectionSet(image_id)
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (5, 6):
            raise DetectionParseError(f"expected 5 or 6 fields, got {len(parts)}", lineno)
        try:
            cls_id = int(parts[0])
        except ValueError:
            raise DetectionParseError(f"class id {parts[0]!r} is not an integer", lineno) from None
        if cls_id not in (0, 1, 2):
            raise DetectionParseError(f"class id {cls_id} not in {{0, 1, 2}}", lineno)
        try:
            nums = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise DetectionParseError(f"non-numeric field: {exc}", lineno) from None
        if any(not math.isfinite(v) for v in nums):
            raise DetectionParseError("non-finite field", lineno)
        xc, yc, w, h = nums[:4]
        conf = nums[4] if len(nums) == 5 else 1.0
        if not all(0.0 <= v <= 1.0 for v in (xc, yc, w, h)):
            raise DetectionParseError("geometry must be normalized to [0, 1]", lineno)
        if not 0.0 <= conf <= 1.0:
            raise DetectionParseError(f"confidence {conf} outside [0, 1]", lineno)
        x0 = _round_half_up((xc - w / 2) * img_w)
        y0 = _round_half_up((yc - h / 2) * img_h)
        x1 = max(_round_half_up((xc + w / 2) * img_w), x0 + 1)
        y1 = max(_round_half_up((yc + h / 2) * img_h), y0 + 1)
        try:
            box = BBox(x0, y0, x1 - x0, y1 - y0).clamp(img_w, img_h)
        except ValueError as exc:
            raise DetectionParseError(str(exc), lineno) from None
        out.detections.append(Detection(ObjectClass(cls_id), box, conf))
    return out


def format_detections(dets: DetectionSet, img_w: int, img_h: int) -> str:
    rows = []
    for d in dets:
        b = d.box
        rows.append(
            f"{int(d.cls)} {(b.x0 + b.w / 2) / img_w:.6f} {(b.y0 + b.h / 2) / img_h:.6f} "
            f"{b.w / img_w:.6f} {b.h / img_h:.6f} {d.confidence:.6f}"
        )
    return "".join(r + "\n" for r in rows)


@dataclass(frozen=True)
class BaselineConfig:
    dark_fraction: float = 0.3
    min_area: int = 20
    max_area_fraction: float = 0.25
    pad: int = 2


def baseline_detect(img: GrayImage, cfg: BaselineConfig = BaselineConfig(),
                    image_id: str = "") -> DetectionSet:
    """Blob detector: global dark-pixel selection, then one box per component.

    Every blob is reported as a crystal. Confidence is the blob's area
    relative to the largest kept blob.
    """
    mask = percentile_binarize(img, cfg.dark_fraction)
    lm = connected_components(mask, Connectivity.EIGHT)
    out = DetectionSet(image_id)
    if lm.n_instances == 0:
        return out
    areas = np.bincount(lm.labels.ravel(), minlength=lm.n_instances + 1)
    max_area = cfg.max_area_fraction * img.width * img.height
    kept = []
    for k, sl in enumerate(ndimage.find_objects(lm.labels), start=1):
        if cfg.min_area <= areas[k] <= max_area:
            kept.append((k, sl))
    if not kept:
        return out
    biggest = max(int(areas[k]) for k, _ in kept)
    for k, (ys, xs) in kept:
        box = BBox(xs.start - cfg.pad, ys.start - cfg.pad,
                   xs.stop - xs.start + 2 * cfg.pad, ys.stop - ys.start + 2 * cfg.pad)
        box = box.clamp(img.width, img.height)
        out.detections.append(Detection(ObjectClass.CRYSTAL, box, int(areas[k]) / biggest))
    return out
