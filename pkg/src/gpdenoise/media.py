"""Video clip and frame containers, color conversion, and PNG frame I/O.

All pixel data lives in [0, 1] as float arrays of shape (T, C, H, W) for
clips and (C, H, W) for single frames. Chroma channels are stored with a
+0.5 offset so every channel shares the unit-interval contract.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

RGB = "RGB"
YCBCR = "YCbCr"

# Full-range BT.709 luma/chroma matrix (UHD-native primaries). Golden values:
#   Y  =  0.2126 R + 0.7152 G + 0.0722 B
#   Cb = (B - Y) / 1.8556 + 0.5
#   Cr = (R - Y) / 1.5748 + 0.5
RGB_TO_YCBCR_MATRIX = np.array(
    [
        [0.2126, 0.7152, 0.0722],
        [-0.2126 / 1.8556, -0.7152 / 1.8556, (1.0 - 0.0722) / 1.8556],
        [(1.0 - 0.2126) / 1.5748, -0.7152 / 1.5748, -0.0722 / 1.5748],
    ],
    dtype=np.float64,
)
# Exact matrix inverse so rgb -> ycbcr -> rgb round-trips to float precision.
YCBCR_TO_RGB_MATRIX = np.linalg.inv(RGB_TO_YCBCR_MATRIX)
CHROMA_OFFSET = 0.5

FRAME_PATTERN = "frame_%06d.png"
METADATA_NAME = "clip.json"


def clamp_unit(data: np.ndarray) -> np.ndarray:
    """Elementwise min(max(x, 0), 1). Idempotent."""
    return np.clip(data, 0.0, 1.0)


def _validate_media_array(data: np.ndarray, ndim: int, what: str) -> None:
    if data.ndim != ndim:
        raise ValueError(f"{what} expects a {ndim}-d array, got shape {data.shape}")
    c, h, w = data.shape[-3], data.shape[-2], data.shape[-1]
    if ndim == 4 and data.shape[0] < 1:
        raise ValueError(f"{what} needs at least one frame, got shape {data.shape}")
    if c not in (1, 2, 3):
        raise ValueError(f"{what} supports 1, 2, or 3 channels, got {c}")
    if h < 8 or w < 8:
        raise ValueError(f"{what} needs spatial size >= 8x8, got {h}x{w}")


@dataclass
class VideoClip:
    """A (T, C, H, W) stack of frames with intensities in [0, 1]."""

    data: np.ndarray
    frame_rate: float | None = None
    color_space: str = RGB

    def __post_init__(self):
        self.data = np.asarray(self.data)
        _validate_media_array(self.data, 4, "VideoClip")
        if self.color_space not in (RGB, YCBCR):
            raise ValueError(f"unknown color space {self.color_space!r}")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(self.data.shape)

    def frame(self, index: int) -> "FrameImage":
        return FrameImage(data=self.data[index], color_space=self.color_space)

    def copy(self) -> "VideoClip":
        return VideoClip(self.data.copy(), self.frame_rate, self.color_space)


@dataclass
class FrameImage:
    """A single (C, H, W) frame with intensities in [0, 1]."""

    data: np.ndarray
    color_space: str = RGB

    def __post_init__(self):
        self.data = np.asarray(self.data)
        _validate_media_array(self.data, 3, "FrameImage")


def _apply_color_matrix(data: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    # data: (..., 3, H, W); contract channel axis against the 3x3 matrix
    return np.einsum("ij,...jhw->...ihw", matrix, data)


def rgb_to_ycbcr_array(data: np.ndarray) -> np.ndarray:
    """(…, 3, H, W) RGB -> YCbCr with +0.5 chroma offset. No clamping."""
    out = _apply_color_matrix(data, RGB_TO_YCBCR_MATRIX.astype(data.dtype, copy=False))
    out[..., 1:, :, :] += CHROMA_OFFSET
    return out


def ycbcr_to_rgb_array(data: np.ndarray, clamp: bool = True) -> np.ndarray:
    """(…, 3, H, W) YCbCr (offset chroma) -> RGB, clamped to [0, 1] by default."""
    shifted = data.copy()
    shifted[..., 1:, :, :] -= CHROMA_OFFSET
    out = _apply_color_matrix(shifted, YCBCR_TO_RGB_MATRIX.astype(data.dtype, copy=False))
    return clamp_unit(out) if clamp else out


def rgb_to_ycbcr(clip: VideoClip) -> VideoClip:
    """Convert an RGB clip to YCbCr. Chroma is stored offset by +0.5."""
    if clip.color_space != RGB:
        raise ValueError(f"rgb_to_ycbcr expects an RGB clip, got {clip.color_space!r}")
    if clip.data.shape[1] != 3:
        raise ValueError("rgb_to_ycbcr expects 3 channels")
    return VideoClip(rgb_to_ycbcr_array(clip.data), clip.frame_rate, YCBCR)


def ycbcr_to_rgb(clip: VideoClip) -> VideoClip:
    """Exact inverse of :func:`rgb_to_ycbcr`, then clamp to [0, 1]."""
    if clip.color_space != YCBCR:
        raise ValueError(f"ycbcr_to_rgb expects a YCbCr clip, got {clip.color_space!r}")
    if clip.data.shape[1] != 3:
        raise ValueError("ycbcr_to_rgb expects 3 channels")
    return VideoClip(ycbcr_to_rgb_array(clip.data), clip.frame_rate, RGB)


def luminance(data: np.ndarray) -> np.ndarray:
    """BT.709 luma of an (…, 3, H, W) RGB array, keeping a channel axis."""
    w = RGB_TO_YCBCR_MATRIX[0].astype(data.dtype, copy=False)
    return np.einsum("j,...jhw->...hw", w, data)[..., None, :, :]


def load_clip(directory: str | Path, frame_pattern: str = FRAME_PATTERN) -> VideoClip:
    """Load a clip from a directory of lexicographically ordered PNG frames.

    Frames may be 8-bit or 16-bit; intensities are scaled to [0, 1]. A
    ``clip.json`` sidecar, when present, supplies frame_rate and color_space.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise IOError(f"clip directory not found: {directory}")
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise IOError(f"no PNG frames found in {directory}")

    frames = []
    shape = None
    for index, path in enumerate(paths):
        arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if arr is None:
            raise IOError(f"frame {index} ({path.name}) could not be decoded")
        if arr.ndim == 2:
            arr = arr[:, :, None]
        elif arr.shape[2] >= 3:
            arr = arr[:, :, 2::-1]  # BGR(A) -> RGB
        scale = 65535.0 if arr.dtype == np.uint16 else 255.0
        frame = arr.astype(np.float32).transpose(2, 0, 1) / scale
        if shape is None:
            shape = frame.shape
        elif frame.shape != shape:
            raise IOError(
                f"frame {index} ({path.name}) has shape {frame.shape}, expected {shape}"
            )
        frames.append(frame)

    frame_rate = None
    color_space = RGB
    meta_path = directory / METADATA_NAME
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        frame_rate = meta.get("frame_rate")
        color_space = meta.get("color_space", RGB)
    return VideoClip(np.stack(frames), frame_rate, color_space)


def save_clip(
    clip: VideoClip,
    directory: str | Path,
    bit_depth: int = 8,
    frame_pattern: str = FRAME_PATTERN,
    raw_float: bool = False,
) -> None:
    """Write a clip as PNG frames plus a ``clip.json`` metadata sidecar.

    ``raw_float`` additionally dumps the unquantized array as ``clip.npy``
    for debugging.
    """
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    scale = 255 if bit_depth == 8 else 65535
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    for t in range(clip.num_frames):
        frame = clamp_unit(clip.data[t])
        quantized = np.round(frame * scale).astype(dtype).transpose(1, 2, 0)
        if quantized.shape[2] == 1:
            quantized = quantized[:, :, 0]
        elif quantized.shape[2] == 3:
            quantized = quantized[:, :, ::-1]  # RGB -> BGR for the encoder
        else:
            raise ValueError("PNG frames support 1 or 3 channels")
        cv2.imwrite(str(directory / (frame_pattern % t)), quantized)

    t, c, h, w = clip.shape
    meta = {
        "num_frames": t,
        "channels": c,
        "height": h,
        "width": w,
        "frame_rate": clip.frame_rate,
        "color_space": clip.color_space,
        "bit_depth": bit_depth,
    }
    (directory / METADATA_NAME).write_text(json.dumps(meta, indent=2) + "\n")
    if raw_float:
        np.save(directory / "clip.npy", clip.data)
