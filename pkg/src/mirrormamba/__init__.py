"""MirrorMamba: selective-scan mirror detection on numpy.

Multi-modal (RGB / depth / optical flow) mirror segmentation with a
state-space backbone, built entirely on numpy with its own reverse-mode
autodiff. Includes a procedural scene generator, training loop, metrics,
and a command line interface.
"""

from .tensor import NumericsError, ShapeError, Tensor

__version__ = "0.1.0"

__all__ = ["Tensor", "ShapeError", "NumericsError", "__version__"]
