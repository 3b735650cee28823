"""Post-processing instance segmentation and quality-control metrics for
microscopic food-crystal images."""

__version__ = "0.1.0"

from .raster import BBox, BitMask, GrayImage, LabelMap, ObjectClass  # noqa: F401
