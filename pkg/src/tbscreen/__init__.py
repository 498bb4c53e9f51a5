"""Chest x-ray TB screening: guided-filter denoising, atlas + graph-cut lung
segmentation, a VGG16-shaped extractor feeding two Bi-LSTMs, and a
ten-fold evaluation harness. Everything is plain numpy with explicit
backward passes."""

from .tensor import ShapeError, concat_last, flatten, reshape

__version__ = "0.1.0"

__all__ = ["ShapeError", "concat_last", "flatten", "reshape", "__version__"]
