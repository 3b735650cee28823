"""Rule engine separating hard mimics from crystals.

Rules are checked in order and the first hit wins:

R1  almost no sharp boundary (all edges faint)           -> hard_mimic
R2  small and no interior opening                        -> hard_mimic
R3  on the image border without opening, or very small   -> hard_mimic
R4  not polygon-like and partly blurry                   -> hard_mimic

Anything else is a crystal. Thresholds are measured proxies, configurable
through ``RuleConfig`` or a ``key=value`` file.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull
from skimage import measure

from .morphology import Connectivity, connected_components, fill_holes
from .raster import BitMask, GrayImage, ObjectClass

# maximum vertex count a polygon fit may use before the residual is read off
MAX_POLYGON_VERTICES = 8


class ContractViolation(ValueError):
    pass


@dataclass(frozen=True)
class RuleConfig:
    tau_sharp: float = 24.0
    f_all_faint: float = 0.2
    f_partial: float = 0.8
    a_small: float = 30.0
    a_tiny: float = 12.0
    s_min: float = 0.85
    eps_poly: float = 1.5

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")

    @classmethod
    def from_file(cls, path: str | Path) -> "RuleConfig":
        from .config import read_key_values

        kv = read_key_values(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(kv) - known
        if unknown:
            raise ValueError(f"unknown rule keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in kv.items()})


@dataclass(frozen=True)
class ObjectFeatures:
    area: int
    touches_border: bool
    has_opening: bool
    sharp_edge_fraction: float
    solidity: float
    polygon_residual: float


def boundary_pixels(bits: np.ndarray) -> np.ndarray:
    """Set pixels with at least one unset 4-neighbour (outside counts as unset)."""
    p = np.pad(bits, 1)
    inner = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return bits & ~inner


def gradient_magnitude(img: GrayImage) -> np.ndarray:
    """Central differences, one-sided at the image border."""
    gy, gx = np.gradient(img.pixels.astype(float))
    return np.hypot(gx, gy)


def _solidity(bits: np.ndarray) -> float:
    ys, xs = np.nonzero(boundary_pixels(bits))
    # pixel corners, so a solid rectangle has solidity exactly 1
    corners = np.concatenate([
        np.stack([xs + dx, ys + dy], axis=1) for dx in (0, 1) for dy in (0, 1)
    ]).astype(float)
    hull_area = ConvexHull(corners).volume
    return min(1.0, bits.sum() / hull_area)


def _seg_dist(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    n = float(d @ d)
    if n == 0.0:
        return np.hypot(*(pts - a).T)
    t = np.clip(((pts - a) @ d) / n, 0.0, 1.0)
    proj = a + t[:, None] * d
    return np.hypot(*(pts - proj).T)


def polygon_residual(contour: np.ndarray, eps: float, max_vertices: int = MAX_POLYGON_VERTICES) -> float:
    """Boundary deviation left after a Douglas-Peucker fit with a vertex budget.

    Splits proceed worst-first and stop once every chain is within ``eps`` or
    the polygon has ``max_vertices`` vertices; the largest remaining
    deviation is returned.
    """
    pts = contour[:-1] if len(contour) > 1 and np.allclose(contour[0], contour[-1]) else contour
    if len(pts) < 3:
        return 0.0
    far = int(np.argmax(np.hypot(*(pts - pts[0]).T)))
    heap = []

    def push(i, j):
        # chain from vertex i to j (exclusive wraparound handled by index list)
        idx = np.arange(i, j + 1) if j > i else np.concatenate([np.arange(i, len(pts)), np.arange(0, j + 1)])
        if len(idx) <= 2:
            heapq.heappush(heap, (-0.0, i, j, -1))
            return
        d = _seg_dist(pts[idx], pts[i], pts[j])
        k = int(np.argmax(d))
        heapq.heappush(heap, (-float(d[k]), i, j, int(idx[k])))

    push(0, far)
    push(far, 0)
    n_vertices = 2
    while heap:
        neg, i, j, k = heap[0]
        if -neg <= eps or n_vertices >= max_vertices or k < 0:
            return -neg
        heapq.heappop(heap)
        push(i, k)
        push(k, j)
        n_vertices += 1
    return 0.0


def _has_opening(img: GrayImage, mask: BitMask) -> bool:
    box = mask.extent
    region = img.pixels[box.slices()].astype(int)
    lo, hi = int(region.min()), int(region.max())
    if lo == hi:
        return False
    dark = BitMask(region <= (lo + hi) / 2)
    return bool((fill_holes(dark, Connectivity.FOUR).bits != dark.bits).any())


def extract_features(img: GrayImage, mask: BitMask, cfg: RuleConfig = RuleConfig()) -> ObjectFeatures:
    """Measure one object. ``mask`` must be non-empty, 8-connected and inside ``img``."""
    tight = mask.tight_box()
    if tight is None:
        raise ContractViolation("mask is empty")
    if tight.x0 < 0 or tight.y0 < 0 or tight.x1 > img.width or tight.y1 > img.height:
        raise ContractViolation("mask extends outside the image")
    bits = mask.bits[tight.y0 - mask.y0:tight.y1 - mask.y0, tight.x0 - mask.x0:tight.x1 - mask.x0]
    m = BitMask(bits, tight.x0, tight.y0)
    if connected_components(m, Connectivity.EIGHT).n_instances != 1:
        raise ContractViolation("mask is not a single connected component")

    edge = boundary_pixels(bits)
    grad = gradient_magnitude(img)[tight.slices()]
    sharp = float(np.count_nonzero(grad[edge] >= cfg.tau_sharp)) / int(edge.sum())

    contours = measure.find_contours(np.pad(bits, 1).astype(float), 0.5)
    contour = max(contours, key=len)
    return ObjectFeatures(
        area=int(bits.sum()),
        touches_border=(tight.x0 == 0 or tight.y0 == 0 or tight.x1 == img.width or tight.y1 == img.height),
        has_opening=_has_opening(img, m),
        sharp_edge_fraction=sharp,
        solidity=_solidity(bits),
        polygon_residual=polygon_residual(contour, cfg.eps_poly),
    )


def classify(features: ObjectFeatures, cfg: RuleConfig = RuleConfig()) -> tuple[ObjectClass, str | None]:
    """Return the class and the rule that fired (None for crystals)."""
    f = features
    if f.sharp_edge_fraction < cfg.f_all_faint:
        return ObjectClass.HARD_MIMIC, "R1"
    if f.area < cfg.a_small and not f.has_opening:
        return ObjectClass.HARD_MIMIC, "R2"
    if (f.touches_border and not f.has_opening) or f.area < cfg.a_tiny:
        return ObjectClass.HARD_MIMIC, "R3"
    if (f.solidity < cfg.s_min or f.polygon_residual > cfg.eps_poly) and f.sharp_edge_fraction < cfg.f_partial:
        return ObjectClass.HARD_MIMIC, "R4"
    return ObjectClass.CRYSTAL, None
