"""Image file access (PPM P6 and PNG) and field-size preprocessing."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .colorspace import rgb_to_lab
from .errors import DataError

IMAGE_SUFFIXES = (".png", ".ppm", ".pnm")


def read_rgb(path) -> np.ndarray:
    """Decode an image file to H x W x 3 uint8 (grey images are expanded)."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DataError(f"cannot decode {path}: {exc}") from None


def write_image(path, rgb: np.ndarray) -> None:
    """Write uint8 RGB; the format follows the suffix (.png or .ppm)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in IMAGE_SUFFIXES:
        raise DataError(f"unsupported image suffix {suffix!r}")
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), "RGB").save(path, format="PNG" if suffix == ".png" else "PPM")


def center_crop(rgb: np.ndarray) -> np.ndarray:
    h, w = rgb.shape[:2]
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    return rgb[top : top + side, left : left + side]


def resize(rgb: np.ndarray, size: int) -> np.ndarray:
    return np.asarray(Image.fromarray(rgb).resize((size, size), Image.BILINEAR), dtype=np.uint8)


def resize_float(channel: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of one float channel."""
    im = Image.fromarray(np.asarray(channel, dtype=np.float32), "F")
    return np.asarray(im.resize((size, size), Image.BILINEAR), dtype=np.float64)


def load_field(path, field_size: int) -> tuple[np.ndarray, np.ndarray]:
    """(lightness, normalised ab) of the centre square resized to ``field_size``."""
    return rgb_to_lab(resize(center_crop(read_rgb(path)), field_size))
