"""Residual application, crop pasting, masked fusion, and reference metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

from .core import Mask, RasterImage
from .errors import DimensionMismatchError, InputError

#: Luma weights (ITU-R BT.601) used by the structural similarity metric.
_LUMA = np.array([0.299, 0.587, 0.114])

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_C1 = (0.01 * 255.0) ** 2
_SSIM_C2 = (0.03 * 255.0) ** 2


@dataclass(frozen=True)
class BodyPartCrop:
    """A rectangular crop of one of the five key body parts.

    Part 1 is the face, 2..5 are hands and feet. ``origin`` is the crop's
    top-left pixel in the parent frame and ``parent_size`` the parent's
    (width, height); the rectangle must lie fully inside the parent.
    """

    image: RasterImage
    part_index: int
    origin: tuple[int, int]
    parent_size: tuple[int, int]

    def __post_init__(self):
        if self.part_index not in (1, 2, 3, 4, 5):
            raise InputError(f"part_index must be 1..5, got {self.part_index}")
        x, y = self.origin
        pw, ph = self.parent_size
        if x < 0 or y < 0 or x + self.image.width > pw or y + self.image.height > ph:
            raise InputError(
                f"crop at ({x}, {y}) size {self.image.size} exceeds parent {self.parent_size}"
            )


def crop_part(frame: RasterImage, part_index: int, x: int, y: int, w: int, h: int) -> BodyPartCrop:
    """Extract a part rectangle from a frame (inverse of paste_crop)."""
    if w < 1 or h < 1:
        raise InputError(f"crop size must be positive, got {w}x{h}")
    if x < 0 or y < 0 or x + w > frame.width or y + h > frame.height:
        raise InputError(
            f"crop ({x}, {y}, {w}, {h}) exceeds frame {frame.width}x{frame.height}"
        )
    return BodyPartCrop(
        image=RasterImage(frame.pixels[y : y + h, x : x + w]),
        part_index=part_index,
        origin=(x, y),
        parent_size=(frame.width, frame.height),
    )


def apply_residual(part: BodyPartCrop, residual: np.ndarray, *, with_clamp_count: bool = False):
    """Add a signed residual to a crop, clamping the sum to [0, 255]."""
    r = np.asarray(residual)
    if not np.issubdtype(r.dtype, np.integer):
        raise InputError(f"residual must be an integer array, got dtype {r.dtype}")
    if r.shape != part.image.pixels.shape:
        raise DimensionMismatchError(
            f"residual shape {r.shape} does not match crop shape {part.image.pixels.shape}"
        )
    if r.min() < -255 or r.max() > 255:
        raise InputError("residual values must lie in [-255, 255]")
    raw = part.image.pixels.astype(np.int32) + r.astype(np.int32)
    clipped = np.clip(raw, 0, 255)
    refined = BodyPartCrop(
        image=RasterImage(clipped.astype(np.uint8)),
        part_index=part.part_index,
        origin=part.origin,
        parent_size=part.parent_size,
    )
    if with_clamp_count:
        return refined, int(np.count_nonzero(raw != clipped))
    return refined


def paste_crop(frame: RasterImage, part: BodyPartCrop) -> RasterImage:
    """Return the frame with the part's rectangle replaced by its image."""
    if part.parent_size != (frame.width, frame.height):
        raise DimensionMismatchError(
            f"crop parent size {part.parent_size} does not match frame "
            f"{(frame.width, frame.height)}"
        )
    x, y = part.origin
    out = frame.pixels.copy()
    out[y : y + part.image.height, x : x + part.image.width] = part.image.pixels
    return RasterImage(out)


def fuse(foreground: RasterImage, background: RasterImage, mask: Mask) -> RasterImage:
    """Per-pixel hard selection: foreground where mask = 1, else background."""
    if foreground.pixels.shape != background.pixels.shape:
        raise DimensionMismatchError(
            f"foreground {foreground.size} and background {background.size} differ"
        )
    if (mask.height, mask.width) != (foreground.height, foreground.width):
        raise DimensionMismatchError(
            f"mask {mask.width}x{mask.height} does not match images {foreground.size}"
        )
    selected = np.where(mask.values[:, :, None] == 1, foreground.pixels, background.pixels)
    return RasterImage(selected)


def psnr(a: RasterImage, b: RasterImage) -> float:
    """Peak signal-to-noise ratio in dB over all channels; inf when identical."""
    if a.pixels.shape != b.pixels.shape:
        raise DimensionMismatchError(f"image sizes differ: {a.size} vs {b.size}")
    diff = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return w / w.sum()


def _windowed_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    # separable Gaussian, 'valid' region only: constant padding touches just
    # the border band we crop away
    half = window.size // 2
    out = convolve1d(img, window, axis=1, mode="constant")[:, half:-half]
    return convolve1d(out, window, axis=0, mode="constant")[half:-half, :]


def _ssim_map(a: RasterImage, b: RasterImage) -> np.ndarray:
    """Per-window similarity over the valid interior; ssim() averages it."""
    if a.pixels.shape != b.pixels.shape:
        raise DimensionMismatchError(f"image sizes differ: {a.size} vs {b.size}")
    if min(a.height, a.width) < _SSIM_WINDOW:
        raise InputError(
            f"images must be at least {_SSIM_WINDOW}x{_SSIM_WINDOW} for SSIM, "
            f"got {a.width}x{a.height}"
        )
    x = a.pixels.astype(np.float64) @ _LUMA
    y = b.pixels.astype(np.float64) @ _LUMA
    window = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_x = _windowed_mean(x, window)
    mu_y = _windowed_mean(y, window)
    var_x = _windowed_mean(x * x, window) - mu_x * mu_x
    var_y = _windowed_mean(y * y, window) - mu_y * mu_y
    cov = _windowed_mean(x * y, window) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return num / den


def ssim(a: RasterImage, b: RasterImage) -> float:
    """Mean local structural similarity on the luma channel.

    Gaussian 11x11 window with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic
    range 255 (the original Wang et al. constants), aggregated over the
    valid interior where the window fits entirely.
    """
    return float(np.mean(_ssim_map(a, b)))


# ---------------------------------------------------------------------------
# crop-geometry JSON
# ---------------------------------------------------------------------------


def _rects_from_obj(obj, source) -> dict[int, tuple[int, int, int, int]]:
    if not isinstance(obj, dict) or "parts" not in obj:
        raise InputError(f"crops entry in {source} must be an object with a 'parts' list")
    rects: dict[int, tuple[int, int, int, int]] = {}
    for part in obj["parts"]:
        try:
            index = int(part["index"])
            rect = (int(part["x"]), int(part["y"]), int(part["w"]), int(part["h"]))
        except (KeyError, TypeError, ValueError):
            raise InputError(
                f"malformed part entry in {source}: expected index, x, y, w, h"
            ) from None
        if index not in (1, 2, 3, 4, 5):
            raise InputError(f"part index must be 1..5 in {source}, got {index}")
        if index in rects:
            raise InputError(f"duplicate part index {index} in {source}")
        rects[index] = rect
    return rects


def load_part_rects(path, frame_id: str | None = None) -> dict[int, tuple[int, int, int, int]]:
    """Load part rectangles {index: (x, y, w, h)} from a crops JSON file.

    The file holds either a single {"frame_id", "parts"} object or an array
    of them; ``frame_id`` selects the entry when an array is given.
    """
    p = Path(path)
    if not p.is_file():
        raise InputError(f"crops file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON in {p}: {exc}") from None
    if isinstance(data, dict):
        if frame_id is not None and data.get("frame_id") != frame_id:
            raise InputError(f"crops file {p} has no entry for frame {frame_id!r}")
        return _rects_from_obj(data, p)
    if isinstance(data, list):
        if frame_id is None:
            raise InputError(f"crops file {p} holds multiple frames; a frame id is required")
        for obj in data:
            if isinstance(obj, dict) and obj.get("frame_id") == frame_id:
                return _rects_from_obj(obj, p)
        raise InputError(f"crops file {p} has no entry for frame {frame_id!r}")
    raise InputError(f"crops file {p} must hold a JSON object or array")
