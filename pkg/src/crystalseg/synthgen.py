"""Synthetic microscopy scenes with exact instance ground truth.

Crystals are convex polygons with a dark rim and a slightly darker than
background interior. Hard mimics are blurred dark ellipses without an
interior opening. Air bubbles are dark rings around a bright core. Objects
never overlap; placement is by rejection sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .detect import Detection, DetectionSet
from .morphology import erode
from .pipeline import Instance, InstanceSet
from .raster import BBox, BitMask, GrayImage, ObjectClass
from .rng import RowStreams, Xoshiro256

MAX_ATTEMPTS = 1000


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    width: int = 256
    height: int = 256
    n_crystals: int = 8
    n_mimics: int = 3
    n_bubbles: int = 1
    size_range: tuple[int, int] = (16, 40)
    background_level: int = 200
    noise_sigma: float = 4.0
    edge_darkness: int = 120
    interior_drop: int = 30
    mimic_darkness: int = 60
    mimic_blur_sigma: float = 4.0
    gap: int = 3
    seed: int = 0

    def __post_init__(self):
        if min(self.n_crystals, self.n_mimics, self.n_bubbles) < 0:
            raise ValueError("object counts must be >= 0")
        lo, hi = self.size_range
        if not 6 <= lo <= hi or hi > min(self.width, self.height):
            raise ValueError(f"size_range {self.size_range} does not fit a {self.width}x{self.height} image")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class Scene:
    image: GrayImage
    truth: InstanceSet
    boxes: DetectionSet
    spec: SceneSpec = field(repr=False, default=None)


def _polygon_mask(vertices: np.ndarray, size: int) -> np.ndarray:
    """Pixel centres inside a convex, counter-clockwise polygon on a size x size grid."""
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    inside = np.ones((size, size), dtype=bool)
    n = len(vertices)
    for i in range(n):
        (ax, ay), (bx, by) = vertices[i], vertices[(i + 1) % n]
        inside &= (bx - ax) * (ys - ay) - (by - ay) * (xs - ax) >= 0
    return inside


def _crystal_shape(rng: Xoshiro256, size: int) -> np.ndarray:
    n = rng.integer(4, 8)
    phase = rng.uniform(0, 2 * math.pi)
    angles = [phase + 2 * math.pi * (i + rng.uniform(-0.25, 0.25)) / n for i in range(n)]
    aspect = rng.uniform(0.7, 1.0)
    rot = rng.uniform(0, math.pi)
    r = (size - 1) / 2
    c, s = math.cos(rot), math.sin(rot)
    verts = []
    for a in angles:
        px, py = r * math.cos(a), r * aspect * math.sin(a)
        verts.append((r + c * px - s * py, r + s * px + c * py))
    # points on an ellipse in angular order form a convex polygon
    return _polygon_mask(np.array(verts), size)


def _ellipse_shape(rng: Xoshiro256, size: int) -> np.ndarray:
    r = (size - 1) / 2
    a = r * rng.uniform(0.7, 1.0)
    b = r * rng.uniform(0.5, 1.0)
    rot = rng.uniform(0, math.pi)
    ys, xs = np.mgrid[0:size, 0:size].astype(float) - r
    c, s = math.cos(rot), math.sin(rot)
    u, v = c * xs + s * ys, -s * xs + c * ys
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _disk_shape(size: int) -> np.ndarray:
    r = (size - 1) / 2
    ys, xs = np.mgrid[0:size, 0:size].astype(float) - r
    return xs ** 2 + ys ** 2 <= r * r + 0.25


def _trim(bits: np.ndarray) -> tuple[np.ndarray, int, int]:
    ys, xs = np.nonzero(bits)
    y0, x0 = ys.min(), xs.min()
    return bits[y0:ys.max() + 1, x0:xs.max() + 1], int(x0), int(y0)


def _ring(bits: np.ndarray, thickness: int) -> np.ndarray:
    m = BitMask(bits)
    inner = m
    for _ in range(thickness):
        inner = erode(inner)
    return bits & ~inner.bits


def generate(spec: SceneSpec) -> Scene:
    """Render one scene. The result is a pure function of ``spec``."""
    rng = Xoshiro256(spec.seed)
    canvas = np.full((spec.height, spec.width), float(spec.background_level))
    occupied: list[BBox] = []
    truth = InstanceSet(f"seed{spec.seed}", width=spec.width, height=spec.height)
    boxes = DetectionSet(truth.image_id)
    kinds = ([ObjectClass.CRYSTAL] * spec.n_crystals + [ObjectClass.HARD_MIMIC] * spec.n_mimics
             + [ObjectClass.AIR_BUBBLE] * spec.n_bubbles)
    blur_pad = int(math.ceil(3 * spec.mimic_blur_sigma))

    for idx, kind in enumerate(kinds):
        size = rng.integer(*spec.size_range)
        if kind is ObjectClass.CRYSTAL:
            shape = _crystal_shape(rng, size)
        elif kind is ObjectClass.HARD_MIMIC:
            shape = _ellipse_shape(rng, size)
        else:
            shape = _disk_shape(size)
        shape, _, _ = _trim(shape)
        h, w = shape.shape
        halo = blur_pad if kind is ObjectClass.HARD_MIMIC else 0
        for _ in range(MAX_ATTEMPTS):
            x0 = rng.integer(0, spec.width - w)
            y0 = rng.integer(0, spec.height - h)
            foot = BBox(x0 - halo - spec.gap, y0 - halo - spec.gap,
                        w + 2 * (halo + spec.gap), h + 2 * (halo + spec.gap))
            if all(foot.iou(o) == 0.0 for o in occupied):
                break
        else:
            raise SceneGenerationError(f"could not place object {idx} ({kind.label}) "
                                       f"after {MAX_ATTEMPTS} attempts")
        occupied.append(BBox(x0 - halo, y0 - halo, w + 2 * halo, h + 2 * halo))
        box = BBox(x0, y0, w, h)
        region = canvas[box.slices()]
        if kind is ObjectClass.CRYSTAL:
            rim = _ring(shape, 2)
            region[shape & ~rim] -= spec.interior_drop
            region[rim] -= spec.edge_darkness
        elif kind is ObjectClass.HARD_MIMIC:
            patch = np.pad(shape.astype(float) * spec.mimic_darkness, blur_pad)
            blurred = ndimage.gaussian_filter(patch, spec.mimic_blur_sigma, mode="constant")
            ys, xs = y0 - blur_pad, x0 - blur_pad
            cy0, cx0 = max(ys, 0), max(xs, 0)
            cy1, cx1 = min(ys + patch.shape[0], spec.height), min(xs + patch.shape[1], spec.width)
            canvas[cy0:cy1, cx0:cx1] -= blurred[cy0 - ys:cy1 - ys, cx0 - xs:cx1 - xs]
        else:
            rim = _ring(shape, 3)
            region[shape & ~rim] += 25
            region[rim] -= spec.edge_darkness
        inst_id = len(truth.instances) + 1
        truth.instances.append(Instance(inst_id, kind, BitMask(shape, x0, y0), box, 1.0))
        boxes.detections.append(Detection(kind, box, 1.0))

    if spec.noise_sigma > 0:
        noise = RowStreams(spec.seed ^ 0x5DEECE66D, spec.height).normal_grid(spec.width)
        canvas += np.rint(noise * spec.noise_sigma)
    image = GrayImage(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
    return Scene(image, truth, boxes, spec)
