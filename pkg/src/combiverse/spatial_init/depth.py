"""Monocular depth backends and the on-disk depth format.

Depth file layout (little-endian):

- 4 bytes magic ``b"CVDM"``
- uint32 format version (1)
- uint32 height, uint32 width
- ``height * width`` float64 values, row-major
"""

from __future__ import annotations

from dataclasses import dataclass
import pathlib
import struct
from typing import Protocol, runtime_checkable

import numpy as np

from combiverse.backend_http import b64encode, decode_array, join_url, post_json
from combiverse.errors import ValidationError
from combiverse.scene_model.raster import png_bytes

DEPTH_MAGIC = b"CVDM"
DEPTH_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Dense relative depth, finite and strictly positive."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ValidationError(f"depth must be a non-empty 2-D raster, got {values.shape}")
        if not np.all(np.isfinite(values)) or not np.all(values > 0):
            raise ValidationError("depth values must be finite and positive")
        values = np.ascontiguousarray(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.values.shape[0]), int(self.values.shape[1]))


@runtime_checkable
class DepthClient(Protocol):
    def depth(self, image: np.ndarray) -> DepthMap:
        """Predict relative depth for an RGBA/RGB image of shape (H, W, C)."""
        ...


class MockDepth:
    """Synthetic depth: a constant, or a ground-plane gradient growing toward the top row."""

    def __init__(self, near: float = 2.0, far: float | None = None) -> None:
        if near <= 0 or (far is not None and far <= 0):
            raise ValidationError("mock depth values must be positive")
        self.near = near
        self.far = far

    def depth(self, image: np.ndarray) -> DepthMap:
        height, width = np.asarray(image).shape[:2]
        if self.far is None:
            return DepthMap(np.full((height, width), self.near))
        rows = np.linspace(self.far, self.near, height)
        return DepthMap(np.repeat(rows[:, None], width, axis=1))


@dataclass
class HttpDepth:
    endpoint: str
    timeout_s: float = 120.0

    def depth(self, image: np.ndarray) -> DepthMap:
        body = post_json(
            join_url(self.endpoint, "depth"),
            {"image": b64encode(png_bytes(image))},
            timeout_s=self.timeout_s,
        )
        return DepthMap(decode_array(body["depth"]))


def save_depth(depth: DepthMap, path: str | pathlib.Path) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = depth.shape
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(DEPTH_MAGIC, DEPTH_VERSION, height, width))
        fh.write(depth.values.astype("<f8").tobytes())
    return path


def load_depth(path: str | pathlib.Path) -> DepthMap:
    data = pathlib.Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValidationError(f"{path}: truncated depth header")
    magic, version, height, width = _HEADER.unpack_from(data)
    if magic != DEPTH_MAGIC or version != DEPTH_VERSION:
        raise ValidationError(f"{path}: not a version {DEPTH_VERSION} depth file")
    payload = data[_HEADER.size :]
    if len(payload) != height * width * 8:
        raise ValidationError(f"{path}: expected {height}x{width} values")
    return DepthMap(np.frombuffer(payload, dtype="<f8").reshape(height, width).astype(np.float64))


__all__ = [
    "DEPTH_MAGIC",
    "DepthClient",
    "DepthMap",
    "HttpDepth",
    "MockDepth",
    "load_depth",
    "save_depth",
]
