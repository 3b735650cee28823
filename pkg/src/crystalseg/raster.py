"""Raster types and PGM file I/O.

Coordinates follow one convention everywhere in the package: ``x`` is the
column, ``y`` is the row, and the origin is the top-left pixel. Arrays are
stored row-major with shape ``(height, width)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class PGMFormatError(ValueError):
    """Malformed PGM stream. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class LabelMapError(ValueError):
    pass


class EmptyRegionError(ValueError):
    pass


class ObjectClass(enum.IntEnum):
    CRYSTAL = 0
    HARD_MIMIC = 1
    AIR_BUBBLE = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: str | int) -> "ObjectClass":
        if isinstance(value, str) and not value.strip().lstrip("-").isdigit():
            return cls[value.strip().upper()]
        return cls(int(value))


def _frozen(arr: np.ndarray) -> np.ndarray:
    if arr.flags.writeable or not arr.flags.c_contiguous:
        arr = np.array(arr, order="C")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale image, ``pixels[y, x]``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"GrayImage needs a non-empty 2-D array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise ValueError("intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class BBox:
    x0: int
    y0: int
    w: int
    h: int

    @property
    def x1(self) -> int:
        return self.x0 + self.w

    @property
    def y1(self) -> int:
        return self.y0 + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def clamp(self, width: int, height: int) -> "BBox":
        """Clip to a ``width`` x ``height`` image.

        Raises EmptyRegionError when nothing of the box is left.
        """
        x0, y0 = max(self.x0, 0), max(self.y0, 0)
        x1, y1 = min(self.x1, width), min(self.y1, height)
        if x1 <= x0 or y1 <= y0:
            raise EmptyRegionError(f"box {self} lies outside the {width}x{height} image")
        return BBox(x0, y0, x1 - x0, y1 - y0)

    def iou(self, other: "BBox") -> float:
        iw = min(self.x1, other.x1) - max(self.x0, other.x0)
        ih = min(self.y1, other.y1) - max(self.y0, other.y0)
        if iw <= 0 or ih <= 0:
            return 0.0
        inter = iw * ih
        return inter / (self.area + other.area - inter)

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y1), slice(self.x0, self.x1)


@dataclass(frozen=True, eq=False)
class BitMask:
    """Binary mask whose top-left pixel sits at ``(x0, y0)`` in the image."""

    bits: np.ndarray
    x0: int = 0
    y0: int = 0

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 2:
            raise ValueError(f"BitMask needs a 2-D array, got shape {b.shape}")
        object.__setattr__(self, "bits", _frozen(b))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def extent(self) -> BBox:
        return BBox(self.x0, self.y0, self.width, self.height)

    def with_bits(self, bits: np.ndarray) -> "BitMask":
        return BitMask(bits, self.x0, self.y0)

    def tight_box(self) -> BBox | None:
        """Bounding box of the set pixels in image coordinates, or None if empty."""
        ys, xs = np.nonzero(self.bits)
        if ys.size == 0:
            return None
        return BBox(self.x0 + int(xs.min()), self.y0 + int(ys.min()),
                    int(xs.max() - xs.min()) + 1, int(ys.max() - ys.min()) + 1)

    def __eq__(self, other):
        if not isinstance(other, BitMask):
            return NotImplemented
        return (self.x0, self.y0) == (other.x0, other.y0) and np.array_equal(self.bits, other.bits)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Instance ids per pixel: 0 is background, 1..K are instances."""

    labels: np.ndarray
    n_instances: int = field(init=False)

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ValueError(f"LabelMap needs a 2-D array, got shape {lab.shape}")
        if lab.size and lab.min() < 0:
            raise LabelMapError("label ids must be non-negative")
        present = np.unique(lab)
        k = int(present[-1]) if present.size else 0
        if present.size != k + 1 and not (present.size == k and k > 0 and present[0] == 1):
            missing = sorted(set(range(1, k + 1)) - set(present.tolist()))
            raise LabelMapError(f"label ids are not contiguous; missing ids {missing}")
        object.__setattr__(self, "labels", _frozen(lab.astype(np.int32, copy=False)))
        object.__setattr__(self, "n_instances", k)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def instance_masks(self) -> dict[int, BitMask]:
        """Per-instance masks cropped to each instance's tight box."""
        from scipy import ndimage

        out = {}
        for k, sl in enumerate(ndimage.find_objects(self.labels), start=1):
            if sl is None:
                continue
            out[k] = BitMask(self.labels[sl] == k, sl[1].start, sl[0].start)
        return out

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)


def crop(img: GrayImage, box: BBox) -> GrayImage:
    """Sub-image under ``box`` after clamping it to the image."""
    b = box.clamp(img.width, img.height)
    return GrayImage(img.pixels[b.slices()])


# PGM codec

_WHITESPACE = b" \t\n\r\x0b\x0c"


def _read_header(data: bytes) -> tuple[bytes, int, int, int, int]:
    """Return (magic, width, height, maxval, offset of first sample)."""
    if len(data) < 2 or data[:2] not in (b"P2", b"P5"):
        raise PGMFormatError("expected magic 'P5' or 'P2'", 0)
    pos = 2
    tokens: list[int] = []
    while len(tokens) < 3:
        while pos < len(data) and (data[pos] in _WHITESPACE or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < len(data) and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise PGMFormatError("truncated header", start)
        tok = data[start:pos]
        if not tok.isdigit():
            raise PGMFormatError(f"non-numeric header field {tok!r}", start)
        tokens.append(int(tok))
        if start == 2:
            raise PGMFormatError("missing whitespace after magic", start)
    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise PGMFormatError(f"invalid dimensions {width}x{height}", pos)
    if not 1 <= maxval <= 65535:
        raise PGMFormatError(f"invalid maxval {maxval}", pos)
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise PGMFormatError("missing whitespace after maxval", pos)
    return data[:2], width, height, maxval, pos + 1


def _read_samples(data: bytes, max_allowed: int) -> np.ndarray:
    magic, width, height, maxval, pos = _read_header(data)
    if maxval > max_allowed:
        raise PGMFormatError(f"maxval {maxval} exceeds {max_allowed}", pos - 1)
    n = width * height
    if magic == b"P5":
        nbytes = 1 if maxval < 256 else 2
        need = n * nbytes
        if len(data) - pos < need:
            raise PGMFormatError(
                f"truncated raster: need {need} bytes, found {len(data) - pos}", len(data))
        dtype = np.uint8 if nbytes == 1 else np.dtype(">u2")
        samples = np.frombuffer(data, dtype=dtype, count=n, offset=pos).astype(np.int64)
    else:
        values = []
        for m in _iter_ascii(data, pos):
            if len(values) == n:
                break
            values.append(m)
        if len(values) < n:
            raise PGMFormatError(f"truncated raster: need {n} samples, found {len(values)}", len(data))
        samples = np.array([v for v, _ in values], dtype=np.int64)
        for v, off in values:
            if v > maxval:
                raise PGMFormatError(f"sample {v} exceeds maxval {maxval}", off)
    if samples.size and samples.max() > maxval:
        off = pos + int(np.argmax(samples > maxval)) * (1 if maxval < 256 else 2)
        raise PGMFormatError(f"sample exceeds maxval {maxval}", off)
    return samples.reshape(height, width)


def _iter_ascii(data: bytes, pos: int):
    end = len(data)
    while pos < end:
        c = data[pos]
        if c in _WHITESPACE:
            pos += 1
        elif c == ord("#"):
            while pos < end and data[pos] not in b"\r\n":
                pos += 1
        else:
            start = pos
            while pos < end and data[pos] not in _WHITESPACE:
                pos += 1
            tok = data[start:pos]
            if not tok.isdigit():
                raise PGMFormatError(f"non-numeric sample {tok!r}", start)
            yield int(tok), start


def read_pgm(data: bytes) -> GrayImage:
    """Decode a P5 or P2 PGM with maxval <= 255."""
    return GrayImage(_read_samples(data, 255).astype(np.uint8))


def write_pgm(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.astype(np.uint8).tobytes()


def read_label_map(data: bytes) -> LabelMap:
    """Decode a 16-bit P5 label map (big-endian samples, maxval 65535)."""
    _, _, _, maxval, pos = _read_header(data)
    if maxval != 65535:
        raise PGMFormatError(f"label maps must use maxval 65535, got {maxval}", pos - 1)
    return LabelMap(_read_samples(data, 65535))


def write_label_map(lm: LabelMap) -> bytes:
    if lm.n_instances > 65535:
        raise LabelMapError(f"{lm.n_instances} instances do not fit in 16 bits")
    header = f"P5\n{lm.width} {lm.height}\n65535\n".encode("ascii")
    return header + lm.labels.astype(">u2").tobytes()


def mask_to_image(mask: BitMask) -> GrayImage:
    """Render a mask as a 0/255 image (set pixels white)."""
    return GrayImage(np.where(mask.bits, 255, 0).astype(np.uint8))
