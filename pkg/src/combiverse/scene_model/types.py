"""Core data types shared by every stage.

Module Information:
    - Filename: types.py
    - Module: scene_model.types
    - Location: src/combiverse/scene_model/

Key Concepts:
    - Pixel convention: origin top-left, x rightward, y downward, bbox max edges exclusive
    - Scene convention: x right, y up, z depth along the reference camera axis
    - Rotations are Euler angles in radians, extrinsic X then Y then Z
    - Every raster in an ObjectRecord shares the scene image dimensions
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
import math
import pathlib
from typing import TYPE_CHECKING, Any

import numpy as np

from combiverse.errors import ValidationError
from combiverse.scene_model.tokenizer import tokenize_caption

if TYPE_CHECKING:
    from combiverse.scene_model.mesh import TriangleMesh


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


# -------------------------------------------------------------------
# Bounding boxes and the scene
# -------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectSpec:
    """Axis-aligned pixel bounding box ``(x_min, y_min, x_max, y_max)``."""

    bbox: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        if len(self.bbox) != 4:
            raise ValidationError(f"bbox needs 4 coordinates, got {len(self.bbox)}")
        coords = tuple(int(c) for c in self.bbox)
        if any(c != raw for c, raw in zip(coords, self.bbox, strict=True)):
            raise ValidationError(f"bbox coordinates must be integers: {self.bbox}")
        x_min, y_min, x_max, y_max = coords
        if x_min >= x_max or y_min >= y_max:
            raise ValidationError(f"degenerate bbox {coords}: need x_min < x_max and y_min < y_max")
        if x_min < 0 or y_min < 0:
            raise ValidationError(f"bbox {coords} has negative coordinates")
        object.__setattr__(self, "bbox", coords)

    @property
    def width(self) -> int:
        return self.bbox[2] - self.bbox[0]

    @property
    def height(self) -> int:
        return self.bbox[3] - self.bbox[1]

    @property
    def center(self) -> tuple[float, float]:
        """Box center ``(X_b, Y_b)`` in pixels."""
        x_min, y_min, x_max, y_max = self.bbox
        return ((x_min + x_max) / 2.0, (y_min + y_max) / 2.0)

    def fits(self, image_size: tuple[int, int]) -> bool:
        width, height = image_size
        return self.bbox[2] <= width and self.bbox[3] <= height

    def indicator(self, image_size: tuple[int, int]) -> np.ndarray:
        """Boolean raster that is True inside the box."""
        width, height = image_size
        inside = np.zeros((height, width), dtype=bool)
        x_min, y_min, x_max, y_max = self.bbox
        inside[y_min:y_max, x_min:x_max] = True
        return inside


@dataclass(frozen=True, eq=False)
class SceneInput:
    """Source image, object boxes, caption and spatial-token positions."""

    image: np.ndarray
    objects: tuple[ObjectSpec, ...]
    caption: str
    spatial_token_indices: tuple[int, ...] = ()
    image_path: pathlib.Path | None = None

    def __post_init__(self) -> None:
        image = np.asarray(self.image)
        if image.ndim != 3 or image.shape[2] != 4 or image.dtype != np.uint8:
            raise ValidationError(
                f"scene image must be an 8-bit RGBA raster, got {image.dtype} {image.shape}"
            )
        if image.shape[0] == 0 or image.shape[1] == 0:
            raise ValidationError("scene image is empty")
        object.__setattr__(self, "image", _frozen(image))
        objects = tuple(self.objects)
        if not objects:
            raise ValidationError("scene needs at least one object")
        for i, spec in enumerate(objects):
            if not spec.fits(self.image_size):
                raise ValidationError(
                    f"objects[{i}].bbox {spec.bbox} lies outside the {self.image_size} image"
                )
        object.__setattr__(self, "objects", objects)
        tokens = tokenize_caption(self.caption)
        indices = tuple(int(j) for j in self.spatial_token_indices)
        for j in indices:
            if not 0 <= j < len(tokens):
                raise ValidationError(
                    f"spatial token index {j} outside caption of {len(tokens)} tokens"
                )
        object.__setattr__(self, "spatial_token_indices", indices)

    @property
    def image_size(self) -> tuple[int, int]:
        """``(W_I, H_I)`` in pixels."""
        return (int(self.image.shape[1]), int(self.image.shape[0]))

    @property
    def tokens(self) -> list[str]:
        return tokenize_caption(self.caption)

    @property
    def rgba(self) -> np.ndarray:
        """Image as float64 RGBA in [0, 1]."""
        return self.image.astype(np.float64) / 255.0


# -------------------------------------------------------------------
# Per-object record
# -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ObjectRecord:
    """Everything produced for one object, filled stage by stage.

    Rasters are optional so a record can be built progressively; every
    present raster is checked against the image size on construction.
    """

    index: int
    spec: ObjectSpec
    image_size: tuple[int, int]
    mask: np.ndarray | None = None
    cutout: np.ndarray | None = None
    noised: np.ndarray | None = None
    inpaint_mask: np.ndarray | None = None
    completed: np.ndarray | None = None
    mesh: TriangleMesh | None = None

    def __post_init__(self) -> None:
        width, height = self.image_size
        for name in ("mask", "cutout", "noised", "inpaint_mask", "completed"):
            raster = getattr(self, name)
            if raster is None:
                continue
            raster = np.asarray(raster)
            if raster.shape[:2] != (height, width):
                raise ValidationError(
                    f"object {self.index}: {name} is {raster.shape[:2]}, image is {(height, width)}"
                )
            if name in ("mask", "inpaint_mask"):
                if raster.dtype != bool:
                    values = np.unique(raster)
                    if not np.all(np.isin(values, (0, 1))):
                        raise ValidationError(f"object {self.index}: {name} is not binary")
                    raster = raster.astype(bool)
            object.__setattr__(self, name, _frozen(raster))
        if self.mask is not None and np.any(self.mask & ~self.spec.indicator(self.image_size)):
            raise ValidationError(f"object {self.index}: mask has foreground outside its bbox")

    def with_updates(self, **changes: Any) -> ObjectRecord:
        return replace(self, **changes)


# -------------------------------------------------------------------
# Placement and camera
# -------------------------------------------------------------------


@dataclass(frozen=True)
class PlacementParams:
    """Similarity transform of one object: uniform scale, Euler rotation, translation."""

    scale: float = 1.0
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        scale = float(self.scale)
        rotation = tuple(float(v) for v in self.rotation)
        translation = tuple(float(v) for v in self.translation)
        if len(rotation) != 3 or len(translation) != 3:
            raise ValidationError("rotation and translation need 3 components each")
        if not math.isfinite(scale) or scale <= 0:
            raise ValidationError(f"scale must be positive and finite, got {scale}")
        if not all(math.isfinite(v) for v in (*rotation, *translation)):
            raise ValidationError("rotation and translation must be finite")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    def as_vector(self) -> np.ndarray:
        """``[s, rx, ry, rz, tx, ty, tz]``."""
        return np.array([self.scale, *self.rotation, *self.translation], dtype=np.float64)

    @classmethod
    def from_vector(cls, values: Iterable[float]) -> PlacementParams:
        v = [float(x) for x in values]
        return cls(scale=v[0], rotation=(v[1], v[2], v[3]), translation=(v[4], v[5], v[6]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "scale": self.scale,
            "rotation": list(self.rotation),
            "translation": list(self.translation),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> PlacementParams:
        return cls(
            scale=data["scale"],
            rotation=tuple(data["rotation"]),
            translation=tuple(data["translation"]),
        )


@dataclass(frozen=True, eq=False)
class CameraSpec:
    """Camera-to-world pose plus pinhole or orthographic intrinsics.

    The camera looks along its local +z axis with +x right and +y up.
    For a pinhole camera ``focal`` is in pixels; for an orthographic
    camera it is pixels per scene unit.
    """

    pose: np.ndarray
    width: int
    height: int
    focal: float
    principal_point: tuple[float, float] | None = None
    orthographic: bool = False
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        pose = np.asarray(self.pose, dtype=np.float64)
        if pose.shape != (4, 4) or not np.all(np.isfinite(pose)):
            raise ValidationError("camera pose must be a finite 4x4 matrix")
        if not np.allclose(pose[3], (0.0, 0.0, 0.0, 1.0)):
            raise ValidationError("camera pose must be an affine rigid transform")
        if abs(np.linalg.det(pose[:3, :3])) < 1e-9:
            raise ValidationError("camera pose is not invertible")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("camera image size must be positive")
        if not self.focal > 0:
            raise ValidationError(f"camera focal must be positive, got {self.focal}")
        object.__setattr__(self, "pose", _frozen(pose))
        if self.principal_point is None:
            object.__setattr__(self, "principal_point", (self.width / 2.0, self.height / 2.0))

    @property
    def position(self) -> np.ndarray:
        return self.pose[:3, 3].copy()

    def world_to_camera(self) -> np.ndarray:
        return np.linalg.inv(self.pose)


__all__ = ["CameraSpec", "ObjectRecord", "ObjectSpec", "PlacementParams", "SceneInput"]
