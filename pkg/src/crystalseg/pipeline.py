"""Per-detection post-processing: crop, binarize, infill, open, keep largest.

Crystal detections get a pixel mask. Hard-mimic and air-bubble detections
pass through with an empty mask so class-level analysis still sees them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detect import DetectionSet
from .morphology import (
    SQUARE_3x3,
    Connectivity,
    StructuringElement,
    fill_holes,
    largest_component,
    open_mask,
    percentile_binarize,
)
from .raster import BBox, BitMask, EmptyRegionError, GrayImage, LabelMap, ObjectClass, crop, mask_to_image, write_pgm

log = logging.getLogger(__name__)

STAGES = ("binarize", "infill", "open", "largest")


@dataclass(frozen=True)
class PipelineConfig:
    dark_fraction: float = 0.70
    se: StructuringElement = SQUARE_3x3
    fg_conn: Connectivity = Connectivity.EIGHT
    stage_dump: Path | None = None

    def __post_init__(self):
        if not 0.0 < self.dark_fraction < 1.0:
            raise ValueError(f"dark_fraction must lie in (0, 1), got {self.dark_fraction}")

    def as_dict(self) -> dict:
        return {
            "dark_fraction": self.dark_fraction,
            "se_shape": self.se.shape,
            "se_radius": self.se.radius,
            "fg_conn": self.fg_conn.value,
            "stage_dump": str(self.stage_dump) if self.stage_dump else None,
        }


@dataclass(frozen=True, eq=False)
class Instance:
    id: int
    cls: ObjectClass
    mask: BitMask
    box: BBox
    confidence: float = 1.0

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.id, self.cls, self.box, self.confidence) == (
            other.id, other.cls, other.box, other.confidence) and self.mask == other.mask


@dataclass
class InstanceSet:
    image_id: str
    instances: list[Instance] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    width: int | None = None
    height: int | None = None

    def crystals(self) -> list[Instance]:
        return [i for i in self.instances if i.cls is ObjectClass.CRYSTAL and i.mask.area > 0]

    def __len__(self):
        return len(self.instances)

    def __eq__(self, other):
        if not isinstance(other, InstanceSet):
            return NotImplemented
        return (self.image_id, self.instances, self.warnings) == (
            other.image_id, other.instances, other.warnings)

    def to_label_map(self, width: int, height: int) -> tuple[LabelMap, dict[int, int]]:
        """Rasterize masked instances; earlier instances win overlapping pixels.

        Returns the map and ``{instance id: label}``; instances left with no
        visible pixel get label 0 so the label set stays contiguous.
        """
        canvas = np.zeros((height, width), dtype=np.int32)
        labels: dict[int, int] = {}
        next_label = 1
        for inst in self.instances:
            m = inst.mask
            if m.area == 0:
                labels[inst.id] = 0
                continue
            sl = (slice(m.y0, m.y0 + m.height), slice(m.x0, m.x0 + m.width))
            free = m.bits & (canvas[sl] == 0)
            if not free.any():
                labels[inst.id] = 0
                continue
            canvas[sl][free] = next_label
            labels[inst.id] = next_label
            next_label += 1
        return LabelMap(canvas), labels


def segment_stages(img: GrayImage, box: BBox, cfg: PipelineConfig) -> dict[str, BitMask]:
    """Run every stage on one box and return the intermediate masks."""
    clamped = box.clamp(img.width, img.height)
    region = crop(img, clamped)
    binary = percentile_binarize(region, cfg.dark_fraction)
    filled = fill_holes(binary, cfg.fg_conn.dual)
    opened = open_mask(filled, cfg.se)
    largest = largest_component(opened, cfg.fg_conn)
    return {
        name: BitMask(m.bits, clamped.x0, clamped.y0)
        for name, m in zip(STAGES, (binary, filled, opened, largest))
    }


def segment_instance(img: GrayImage, box: BBox, cfg: PipelineConfig = PipelineConfig()) -> BitMask:
    return segment_stages(img, box, cfg)["largest"]


def _dump_stages(stages: dict[str, BitMask], directory: Path, image_id: str, idx: int) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name, m in stages.items():
        (directory / f"{image_id}_{idx}_{name}.pgm").write_bytes(write_pgm(mask_to_image(m)))


def segment_image(img: GrayImage, dets: DetectionSet,
                  cfg: PipelineConfig = PipelineConfig()) -> InstanceSet:
    """Segment every crystal detection; carry other classes through unmasked."""
    out = InstanceSet(dets.image_id, width=img.width, height=img.height)
    next_id = 1
    for idx, det in enumerate(dets.detections):
        try:
            box = det.box.clamp(img.width, img.height)
        except EmptyRegionError as exc:
            out.warnings.append(f"detection {idx}: {exc}")
            continue
        if det.cls is ObjectClass.CRYSTAL:
            stages = segment_stages(img, box, cfg)
            if cfg.stage_dump is not None:
                _dump_stages(stages, Path(cfg.stage_dump), dets.image_id or "image", idx)
            mask = stages["largest"]
            if mask.area == 0:
                out.warnings.append(f"detection {idx}: mask empty after opening")
                continue
        else:
            mask = BitMask(np.zeros((box.h, box.w), dtype=bool), box.x0, box.y0)
        out.instances.append(Instance(next_id, det.cls, mask, box, det.confidence))
        next_id += 1
    for w in out.warnings:
        log.warning("%s: %s", dets.image_id, w)
    return out


def overlay(img: GrayImage, instances: InstanceSet) -> GrayImage:
    """Copy of ``img`` with crystal mask boundaries burned in at intensity 0."""
    px = img.pixels.copy()
    for inst in instances.crystals():
        m = inst.mask.bits
        padded = np.pad(m, 1)
        interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
        edge = m & ~interior
        view = px[inst.mask.y0:inst.mask.y0 + inst.mask.height, inst.mask.x0:inst.mask.x0 + inst.mask.width]
        view[edge] = 0
    return GrayImage(px)
