"""Binary morphology kernel used by the per-box segmentation.

All operators work on the mask's own canvas; anything outside it counts as
background. Tie-breaks are row-major so results are reproducible.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .raster import BitMask, GrayImage, LabelMap


class Connectivity(enum.Enum):
    FOUR = "four"
    EIGHT = "eight"

    @property
    def dual(self) -> "Connectivity":
        return Connectivity.EIGHT if self is Connectivity.FOUR else Connectivity.FOUR

    @property
    def structure(self) -> np.ndarray:
        if self is Connectivity.FOUR:
            return ndimage.generate_binary_structure(2, 1)
        return ndimage.generate_binary_structure(2, 2)


@dataclass(frozen=True)
class StructuringElement:
    shape: str = "square"
    radius: int = 1

    def __post_init__(self):
        if self.shape not in ("square", "disk"):
            raise ValueError(f"unknown structuring element shape {self.shape!r}")
        if self.radius < 1:
            raise ValueError("structuring element radius must be >= 1")

    @cached_property
    def offsets(self) -> tuple[tuple[int, int], ...]:
        """(dx, dy) pairs, row-major."""
        r = self.radius
        return tuple(
            (dx, dy)
            for dy in range(-r, r + 1)
            for dx in range(-r, r + 1)
            if self.shape == "square" or dx * dx + dy * dy <= r * r
        )


SQUARE_3x3 = StructuringElement("square", 1)


def binarize_count(n: int, fraction: float) -> int:
    """Number of pixels selected: floor(fraction * n + 0.5)."""
    return int(np.floor(fraction * n + 0.5))


def percentile_binarize(region: GrayImage, fraction: float) -> BitMask:
    """Set the ``round(fraction * N)`` darkest pixels.

    Ties at the threshold intensity go to earlier pixels in row-major order.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    flat = region.pixels.ravel()
    k = binarize_count(flat.size, fraction)
    bits = np.zeros(flat.size, dtype=bool)
    if k:
        # stable sort keeps scan order among equal intensities
        bits[np.argsort(flat, kind="stable")[:k]] = True
    return BitMask(bits.reshape(region.pixels.shape))


def fill_holes(mask: BitMask, conn: Connectivity = Connectivity.FOUR) -> BitMask:
    """Set every background pixel that cannot reach the canvas border.

    ``conn`` is the background connectivity.
    """
    bg = ~mask.bits
    if not bg.any():
        return mask
    lab, _ = ndimage.label(bg, structure=conn.structure)
    border = np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]))
    outside = np.isin(lab, border[border > 0])
    return mask.with_bits(~outside)


def _shifted(bits: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """out[y, x] = bits[y + dy, x + dx], zero outside."""
    h, w = bits.shape
    out = np.zeros_like(bits)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    out[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)] = \
        bits[max(0, dy):h - max(0, -dy), max(0, dx):w - max(0, -dx)]
    return out


def erode(mask: BitMask, se: StructuringElement = SQUARE_3x3) -> BitMask:
    bits = mask.bits
    out = np.ones_like(bits)
    for dx, dy in se.offsets:
        out &= _shifted(bits, dx, dy)
    return mask.with_bits(out)


def dilate(mask: BitMask, se: StructuringElement = SQUARE_3x3) -> BitMask:
    bits = mask.bits
    out = np.zeros_like(bits)
    for dx, dy in se.offsets:
        out |= _shifted(bits, -dx, -dy)
    return mask.with_bits(out)


def open_mask(mask: BitMask, se: StructuringElement = SQUARE_3x3) -> BitMask:
    return dilate(erode(mask, se), se)


def connected_components(mask: BitMask, conn: Connectivity = Connectivity.EIGHT) -> LabelMap:
    """Label foreground regions 1..K in order of their first row-major pixel."""
    lab, n = ndimage.label(mask.bits, structure=conn.structure)
    if n:
        flat = lab.ravel()
        ids, first = np.unique(flat, return_index=True)
        fg = ids > 0
        order = ids[fg][np.argsort(first[fg], kind="stable")]
        remap = np.zeros(n + 1, dtype=np.int32)
        remap[order] = np.arange(1, n + 1, dtype=np.int32)
        lab = remap[lab]
    return LabelMap(lab)


def largest_component(mask: BitMask, conn: Connectivity = Connectivity.EIGHT) -> BitMask:
    """Keep the biggest component; ties go to the one seen first in scan order."""
    lm = connected_components(mask, conn)
    if lm.n_instances <= 1:
        return mask
    sizes = np.bincount(lm.labels.ravel())
    sizes[0] = 0
    return mask.with_bits(lm.labels == int(np.argmax(sizes)))
