"""Backend contracts for segmentation, inpainting and image-to-3D reconstruction.

Module Information:
    - Filename: clients.py
    - Module: decomposition.clients
    - Location: src/combiverse/decomposition/

Key Concepts:
    - Each backend is a ``Protocol``; the pipeline never depends on a concrete model
    - Deterministic in-process mocks for tests and desk-scale runs
    - HTTP adapters speaking base64 PNG / OBJ over JSON
    - Mocks record every request so tests can inspect prompts and settings
"""

from __future__ import annotations

from dataclasses import dataclass
import threading
from typing import Any, Protocol, runtime_checkable

import numpy as np

from combiverse.backend_http import b64decode, b64encode, join_url, post_json
from combiverse.errors import ValidationError
from combiverse.scene_model.mesh import TriangleMesh, icosphere, mesh_from_obj_bytes, unit_cube
from combiverse.scene_model.raster import decode_png, png_bytes
from combiverse.scene_model.types import ObjectSpec

DEFAULT_GUIDANCE_SCALE = 7.5
DEFAULT_NUM_STEPS = 30


@runtime_checkable
class SegmenterClient(Protocol):
    def segment(self, image: np.ndarray, bbox: ObjectSpec) -> np.ndarray:
        """Return a boolean (H, W) foreground mask for the object prompted by ``bbox``."""
        ...


@runtime_checkable
class InpainterClient(Protocol):
    guidance_scale: float
    num_steps: int

    def inpaint(
        self,
        image: np.ndarray,
        mask: np.ndarray,
        prompt: str,
        guidance_scale: float,
        num_steps: int,
    ) -> np.ndarray:
        """Fill the True pixels of ``mask`` and return an RGB uint8 image."""
        ...


@runtime_checkable
class ReconstructorClient(Protocol):
    def reconstruct(self, image: np.ndarray) -> TriangleMesh:
        """Lift a completed object image to a triangle mesh."""
        ...


def check_inpainter_settings(guidance_scale: float, num_steps: int) -> None:
    if not guidance_scale > 0:
        raise ValidationError(f"guidance_scale must be positive, got {guidance_scale}")
    if int(num_steps) != num_steps or num_steps < 1:
        raise ValidationError(f"num_steps must be an integer >= 1, got {num_steps}")


# -------------------------------------------------------------------
# Request log shared by the mocks
# -------------------------------------------------------------------


class _RequestLog:
    def __init__(self) -> None:
        self.requests: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    def record(self, **entry: Any) -> None:
        with self._lock:
            self.requests.append(entry)


# -------------------------------------------------------------------
# Mock segmenters
# -------------------------------------------------------------------


class BoxSegmenter(_RequestLog):
    """Returns the bbox itself as foreground, optionally grown by ``leak`` pixels."""

    def __init__(self, leak: int = 0) -> None:
        super().__init__()
        self.leak = leak

    def segment(self, image: np.ndarray, bbox: ObjectSpec) -> np.ndarray:
        self.record(kind="segment", bbox=bbox.bbox)
        height, width = image.shape[:2]
        x_min, y_min, x_max, y_max = bbox.bbox
        mask = np.zeros((height, width), dtype=bool)
        mask[
            max(0, y_min - self.leak) : min(height, y_max + self.leak),
            max(0, x_min - self.leak) : min(width, x_max + self.leak),
        ] = True
        return mask


class AlphaSegmenter(_RequestLog):
    """Foreground wherever the image alpha exceeds ``threshold`` (ignores the box)."""

    def __init__(self, threshold: int = 127) -> None:
        super().__init__()
        self.threshold = threshold

    def segment(self, image: np.ndarray, bbox: ObjectSpec) -> np.ndarray:
        self.record(kind="segment", bbox=bbox.bbox)
        return np.asarray(image)[..., 3] > self.threshold


# -------------------------------------------------------------------
# Mock inpainters
# -------------------------------------------------------------------


class IdentityInpainter(_RequestLog):
    def __init__(
        self, guidance_scale: float = DEFAULT_GUIDANCE_SCALE, num_steps: int = DEFAULT_NUM_STEPS
    ) -> None:
        super().__init__()
        check_inpainter_settings(guidance_scale, num_steps)
        self.guidance_scale = guidance_scale
        self.num_steps = num_steps

    def inpaint(self, image, mask, prompt, guidance_scale, num_steps) -> np.ndarray:
        self.record(
            kind="inpaint", prompt=prompt, guidance_scale=guidance_scale, num_steps=num_steps
        )
        return np.array(image[..., :3], dtype=np.uint8)


class ConstantFillInpainter(IdentityInpainter):
    """Paints every masked pixel with one color."""

    def __init__(self, fill: tuple[int, int, int] = (128, 128, 128), **settings: Any) -> None:
        super().__init__(**settings)
        self.fill = tuple(int(c) for c in fill)

    def inpaint(self, image, mask, prompt, guidance_scale, num_steps) -> np.ndarray:
        out = super().inpaint(image, mask, prompt, guidance_scale, num_steps)
        out[np.asarray(mask, dtype=bool)] = self.fill
        return out


# -------------------------------------------------------------------
# Mock reconstructors
# -------------------------------------------------------------------


def dominant_color(image: np.ndarray) -> np.ndarray:
    """Most frequent RGB value, as floats in [0, 1].

    Noise backgrounds spread over many values, so a flat-colored object wins.
    """
    pixels = np.asarray(image)[..., :3].reshape(-1, 3)
    values, counts = np.unique(pixels, axis=0, return_counts=True)
    return values[int(np.argmax(counts))].astype(np.float64) / 255.0


class CubeReconstructor(_RequestLog):
    """Unit cube tinted with the image's dominant color (12 faces)."""

    def reconstruct(self, image: np.ndarray) -> TriangleMesh:
        self.record(kind="reconstruct", shape=tuple(np.asarray(image).shape))
        return unit_cube(dominant_color(image))


class IcosphereReconstructor(_RequestLog):
    """Icosphere with ``20 * 4**subdivisions`` faces; 5 subdivisions gives 20,480."""

    def __init__(self, subdivisions: int = 5, radius: float = 0.5) -> None:
        super().__init__()
        self.subdivisions = subdivisions
        self.radius = radius

    def reconstruct(self, image: np.ndarray) -> TriangleMesh:
        self.record(kind="reconstruct", shape=tuple(np.asarray(image).shape))
        sphere = icosphere(self.subdivisions, dominant_color(image))
        return TriangleMesh(
            sphere.vertices * (self.radius / 0.5), sphere.faces, sphere.vertex_colors
        )


# -------------------------------------------------------------------
# HTTP adapters
# -------------------------------------------------------------------


@dataclass
class HttpSegmenter:
    endpoint: str
    timeout_s: float = 60.0

    def segment(self, image: np.ndarray, bbox: ObjectSpec) -> np.ndarray:
        body = post_json(
            join_url(self.endpoint, "segment"),
            {"image": b64encode(png_bytes(image)), "bbox": list(bbox.bbox)},
            timeout_s=self.timeout_s,
        )
        return decode_png(b64decode(body["mask"]), mode="L") > 127


@dataclass
class HttpInpainter:
    endpoint: str
    guidance_scale: float = DEFAULT_GUIDANCE_SCALE
    num_steps: int = DEFAULT_NUM_STEPS
    timeout_s: float = 300.0

    def __post_init__(self) -> None:
        check_inpainter_settings(self.guidance_scale, self.num_steps)

    def inpaint(self, image, mask, prompt, guidance_scale, num_steps) -> np.ndarray:
        body = post_json(
            join_url(self.endpoint, "inpaint"),
            {
                "image": b64encode(png_bytes(image)),
                "mask": b64encode(png_bytes(np.asarray(mask, dtype=bool))),
                "prompt": prompt,
                "guidance_scale": guidance_scale,
                "num_steps": num_steps,
            },
            timeout_s=self.timeout_s,
        )
        return decode_png(b64decode(body["image"]), mode="RGB")


@dataclass
class HttpReconstructor:
    endpoint: str
    timeout_s: float = 600.0

    def reconstruct(self, image: np.ndarray) -> TriangleMesh:
        body = post_json(
            join_url(self.endpoint, "reconstruct"),
            {"image": b64encode(png_bytes(image))},
            timeout_s=self.timeout_s,
        )
        return mesh_from_obj_bytes(b64decode(body["mesh"]))


__all__ = [
    "DEFAULT_GUIDANCE_SCALE",
    "DEFAULT_NUM_STEPS",
    "AlphaSegmenter",
    "BoxSegmenter",
    "ConstantFillInpainter",
    "CubeReconstructor",
    "HttpInpainter",
    "HttpReconstructor",
    "HttpSegmenter",
    "IcosphereReconstructor",
    "IdentityInpainter",
    "InpainterClient",
    "ReconstructorClient",
    "SegmenterClient",
    "check_inpainter_settings",
    "dominant_color",
]
