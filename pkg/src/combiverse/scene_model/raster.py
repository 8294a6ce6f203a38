"""PNG read/write helpers for images, masks and float renders."""

import io
import pathlib

import numpy as np
from PIL import Image

from combiverse.errors import ValidationError


def read_rgba(path: str | pathlib.Path) -> np.ndarray:
    """Decode any image file into an 8-bit RGBA array (H, W, 4)."""
    path = pathlib.Path(path)
    if not path.exists():
        raise ValidationError(f"image file not found: {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert("RGBA"), dtype=np.uint8).copy()


def read_rgb(path: str | pathlib.Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()


def read_mask(path: str | pathlib.Path) -> np.ndarray:
    """Decode a single-channel PNG into a boolean mask (foreground where value > 127)."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) > 127


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Convert a float raster in [0, 1] or a bool mask to 8-bit."""
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image
    if image.dtype == bool:
        return image.astype(np.uint8) * 255
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def _as_pil(image: np.ndarray) -> Image.Image:
    data = to_uint8(image)
    if data.ndim == 2 or (data.ndim == 3 and data.shape[2] in (3, 4)):
        return Image.fromarray(np.ascontiguousarray(data))
    raise ValidationError(f"cannot encode raster of shape {data.shape} as PNG")


def write_png(path: str | pathlib.Path, image: np.ndarray) -> pathlib.Path:
    """Write an RGB, RGBA or single-channel raster as PNG."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _as_pil(image).save(path, format="PNG")
    return path


def png_bytes(image: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    _as_pil(image).save(buffer, format="PNG")
    return buffer.getvalue()


def decode_png(data: bytes, mode: str = "RGBA") -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert(mode), dtype=np.uint8).copy()


__all__ = [
    "decode_png",
    "png_bytes",
    "read_mask",
    "read_rgb",
    "read_rgba",
    "to_uint8",
    "write_png",
]
