"""Parameterized Gaussian view sampling for contrastive pretraining."""

from gausscrop.crops import (
    CropperConfig,
    ImageDims,
    Method,
    PadPolicy,
    Rect,
    ViewSet,
    generate_views,
)
from gausscrop.rng import RngStream

__all__ = [
    "CropperConfig",
    "ImageDims",
    "Method",
    "PadPolicy",
    "Rect",
    "RngStream",
    "ViewSet",
    "generate_views",
]

__version__ = "0.1.0"
