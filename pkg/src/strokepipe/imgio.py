"""Grayscale image loading and preprocessing.

Images are held as integer bin indices plus an optional validity mask
(``True`` = valid pixel). Lesion pixels are marked invalid so that texture
statistics can skip them.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .util import atomic_write_bytes

__all__ = [
    "GrayImage",
    "ImageFormatError",
    "load_image",
    "save_pgm",
    "normalize_intensity",
    "quantize",
    "apply_mask",
    "with_lesions",
    "resample",
]

PathLike = Union[str, os.PathLike]

_MULTI_CHANNEL_MODES = {"RGB", "RGBA", "RGBX", "CMYK", "YCbCr", "LAB", "HSV", "LA", "La", "P", "PA"}


class ImageFormatError(ValueError):
    """Raised for unreadable, multi-channel or non-8-bit inputs."""


@dataclass(frozen=True)
class GrayImage:
    """Quantized 2-D intensity grid with an optional validity mask."""

    pixels: np.ndarray
    levels: int = 256
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=np.int64, copy=True)
        if pixels.ndim != 2 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValueError(f"pixels must be a non-empty 2-D grid, got shape {pixels.shape}")
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        mask = None
        if self.mask is not None:
            mask = np.array(self.mask, dtype=bool, copy=True)
            if mask.shape != pixels.shape:
                raise ValueError(f"mask shape {mask.shape} != image shape {pixels.shape}")
        valid = pixels if mask is None else pixels[mask]
        if valid.size and (valid.min() < 0 or valid.max() > self.levels - 1):
            raise ValueError(f"pixel values must lie in [0, {self.levels - 1}]")
        pixels.setflags(write=False)
        if mask is not None:
            mask.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "mask", mask)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def valid(self) -> np.ndarray:
        """Boolean validity grid (all True when no mask is attached)."""
        if self.mask is None:
            return np.ones(self.pixels.shape, dtype=bool)
        return self.mask

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())

    @property
    def bpp(self) -> int:
        """Bits per pixel; only defined for power-of-two level counts."""
        bits = int(self.levels).bit_length() - 1
        if 1 << bits != self.levels:
            raise ValueError(f"levels={self.levels} is not a power of two")
        return bits

    def replace(self, pixels=None, levels=None, mask=...) -> "GrayImage":
        return GrayImage(
            pixels=self.pixels if pixels is None else pixels,
            levels=self.levels if levels is None else levels,
            mask=self.mask if mask is ... else mask,
        )


def _read_8bit(path: PathLike) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in _MULTI_CHANNEL_MODES:
                raise ImageFormatError(f"{path}: multi-channel image (mode {mode}) not supported")
            if mode != "L":
                raise ImageFormatError(f"{path}: bit depth must be 8 (got mode {mode})")
            return np.asarray(im, dtype=np.uint8).copy()
    except ImageFormatError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageFormatError(f"{path}: unreadable image ({exc})") from exc


def load_image(path: PathLike, format: Optional[str] = None) -> GrayImage:
    """Load an 8-bit single-channel PGM (P5) or PNG as a 256-level image.

    ``format`` is ``"pgm"`` or ``"png"``; inferred from the suffix when omitted.
    """
    fmt = (format or Path(path).suffix.lstrip(".")).lower()
    if fmt not in {"pgm", "png"}:
        raise ImageFormatError(f"{path}: unsupported format {fmt!r} (expected pgm or png)")
    if not Path(path).is_file():
        raise ImageFormatError(f"{path}: unreadable image (no such file)")
    return GrayImage(_read_8bit(path), levels=256)


def save_pgm(path: PathLike, pixels: np.ndarray) -> None:
    """Write an 8-bit binary PGM (P5)."""
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ValueError("PGM output must be 2-D")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
        raise ValueError("PGM output values must lie in [0, 255]")
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + arr.astype(np.uint8).tobytes())


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def normalize_intensity(img: GrayImage, top_fraction: float = 0.001) -> GrayImage:
    """Rescale so that the mean of the brightest ``top_fraction`` of valid pixels
    maps to the top bin; brighter pixels are clamped. Masked pixels are untouched.
    """
    if not 0 < top_fraction <= 1:
        raise ValueError("top_fraction must lie in (0, 1]")
    valid = img.valid
    values = img.pixels[valid]
    if values.size == 0:
        raise ValueError("cannot normalize: all pixels are masked")
    n_top = math.ceil(top_fraction * values.size)
    top = np.sort(values)[-n_top:]
    ref = float(top.mean())
    if ref == 0.0:
        # all-zero image: nothing to stretch
        return img
    top_bin = img.levels - 1
    scaled = _round_half_up(np.minimum(img.pixels / ref, 1.0) * top_bin).astype(np.int64)
    out = np.where(valid, scaled, img.pixels)
    return img.replace(pixels=out)


def quantize(img: GrayImage, target_bpp: int) -> GrayImage:
    """Reduce to ``2**target_bpp`` levels via ``floor(v * new / old)``."""
    if not 1 <= target_bpp <= 8:
        raise ValueError(f"target_bpp must lie in [1, 8], got {target_bpp}")
    source_bpp = img.bpp
    if target_bpp > source_bpp:
        raise ValueError(f"target bpp {target_bpp} exceeds source bpp {source_bpp}")
    new_levels = 1 << target_bpp
    out = (img.pixels * new_levels) // img.levels
    return img.replace(pixels=out, levels=new_levels)


def _lesion_grid(mask_pixels: np.ndarray, source: str) -> np.ndarray:
    distinct = np.unique(mask_pixels)
    nonzero = distinct[distinct != 0]
    if nonzero.size > 1:
        raise ValueError(f"{source}: non-binary mask (values {distinct.tolist()})")
    return mask_pixels != 0


def with_lesions(img: GrayImage, lesion: np.ndarray) -> GrayImage:
    """Mark ``lesion`` pixels (nonzero) invalid, keeping any existing mask."""
    lesion = np.asarray(lesion)
    if lesion.shape != img.shape:
        raise ValueError(f"mask dimensions {lesion.shape} do not match image {img.shape}")
    lesion = _lesion_grid(lesion, "mask")
    return img.replace(mask=img.valid & ~lesion)


def apply_mask(img: GrayImage, mask_path: PathLike) -> GrayImage:
    """Load a binary lesion mask (0 = valid, nonzero = lesion) and attach it."""
    raw = load_image(mask_path).pixels
    if raw.shape != img.shape:
        raise ValueError(f"{mask_path}: mask dimensions {raw.shape} do not match image {img.shape}")
    return img.replace(mask=img.valid & ~_lesion_grid(raw, str(mask_path)))


def _nearest_index(n_out: int, n_in: int) -> np.ndarray:
    # centre-aligned nearest neighbour, integer arithmetic only
    dst = np.arange(n_out)
    return ((2 * dst + 1) * n_in) // (2 * n_out)


def resample(img: GrayImage, w: int, h: int) -> GrayImage:
    """Nearest-neighbour resample to ``w`` x ``h``; masks follow their source pixel."""
    if w < 1 or h < 1:
        raise ValueError("target size must be at least 1x1")
    rows = _nearest_index(h, img.height)
    cols = _nearest_index(w, img.width)
    pixels = img.pixels[np.ix_(rows, cols)]
    mask = None if img.mask is None else img.mask[np.ix_(rows, cols)]
    return GrayImage(pixels, levels=img.levels, mask=mask)
