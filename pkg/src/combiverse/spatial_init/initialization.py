"""Coarse placement from bounding boxes and monocular depth.

Scale is the larger of the box-to-image width and height ratios.
Translation maps the box-center pixel offset from the image center to
scene units with ``pixel_to_scene`` (default ``1 / W_I``), flips y so the
scene's y axis points up, and takes depth from the mean depth under the
object mask. Rotation starts at zero.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from combiverse.errors import DegenerateSegmentationError, ValidationError
from combiverse.scene_model.types import ObjectRecord, ObjectSpec, PlacementParams
from combiverse.spatial_init.depth import DepthMap
from combiverse.utils_logger import logger


def _check_size(image_size: tuple[int, int]) -> tuple[int, int]:
    width, height = image_size
    if width <= 0 or height <= 0:
        raise ValidationError(f"image size must be positive, got {image_size}")
    return int(width), int(height)


def init_scale(bbox: ObjectSpec, image_size: tuple[int, int]) -> float:
    """``max(W_b / W_I, H_b / H_I)``."""
    width, height = _check_size(image_size)
    return max(bbox.width / width, bbox.height / height)


def average_object_depth(depth: DepthMap, mask: np.ndarray) -> float:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != depth.shape:
        raise ValidationError(f"mask {mask.shape} does not match depth {depth.shape}")
    if not mask.any():
        raise DegenerateSegmentationError("cannot average depth over an empty mask")
    return float(depth.values[mask].mean())


def init_translation(
    bbox: ObjectSpec,
    image_size: tuple[int, int],
    depth: float,
    pixel_to_scene: float | None = None,
) -> tuple[float, float, float]:
    """Place the object center from its box center and mean depth."""
    width, height = _check_size(image_size)
    k = 1.0 / width if pixel_to_scene is None else float(pixel_to_scene)
    if not k > 0:
        raise ValidationError(f"pixel_to_scene must be positive, got {pixel_to_scene}")
    if not np.isfinite(depth):
        raise ValidationError("depth must be finite")
    center_x, center_y = bbox.center
    return ((center_x - width / 2.0) * k, -(center_y - height / 2.0) * k, float(depth))


def init_rotation() -> tuple[float, float, float]:
    return (0.0, 0.0, 0.0)


def initialize_placements(
    records: Sequence[ObjectRecord],
    depth: DepthMap,
    *,
    pixel_to_scene: float | None = None,
) -> list[PlacementParams]:
    """Initial scale, rotation and translation for every object."""
    placements = []
    for record in records:
        if record.mask is None:
            raise ValidationError(f"object {record.index}: mask is missing")
        try:
            d = average_object_depth(depth, record.mask)
        except DegenerateSegmentationError as e:
            raise DegenerateSegmentationError(str(e), record.index) from e
        params = PlacementParams(
            scale=init_scale(record.spec, record.image_size),
            rotation=init_rotation(),
            translation=init_translation(record.spec, record.image_size, d, pixel_to_scene),
        )
        logger.info(
            f"Initial placement for object {record.index}: s={params.scale:.4f} "
            f"t=({params.translation[0]:.4f}, {params.translation[1]:.4f}, {params.translation[2]:.4f})"
        )
        placements.append(params)
    return placements


__all__ = [
    "average_object_depth",
    "init_rotation",
    "init_scale",
    "init_translation",
    "initialize_placements",
]
