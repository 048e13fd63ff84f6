"""Uncertainty-guided spatio-temporal video denoising toolkit."""

__version__ = "0.1.0"

from .media import FrameImage, VideoClip, clamp_unit, load_clip, save_clip

__all__ = [
    "FrameImage",
    "VideoClip",
    "clamp_unit",
    "load_clip",
    "save_clip",
    "__version__",
]
