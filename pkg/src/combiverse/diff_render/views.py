"""Novel-view sampling around the composition and debug dumps."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
import math
import pathlib

import numpy as np

from combiverse.diff_render.camera import look_at, with_pose
from combiverse.diff_render.rasterizer import RenderOutput
from combiverse.errors import ValidationError
from combiverse.scene_model.raster import write_png
from combiverse.scene_model.types import CameraSpec


@dataclass(frozen=True)
class ViewSampler:
    """Uniform azimuth/elevation sampling on a sphere around ``center``.

    Angles are in degrees. Azimuth 0 and elevation 0 put the camera at
    ``center - (0, 0, radius)``, which is the reference camera when
    ``center = (0, 0, radius)``. ``radius`` and ``center`` left as ``None``
    are filled in by the combiner from the initial placements.
    """

    count: int = 10
    elevation: tuple[float, float] = (-10.0, 45.0)
    azimuth: tuple[float, float] = (0.0, 360.0)
    radius: float | None = None
    center: tuple[float, float, float] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValidationError("renderer.views.count must be >= 1")
        for name in ("elevation", "azimuth"):
            low, high = getattr(self, name)
            if not low < high:
                raise ValidationError(f"renderer.views.{name} range [{low}, {high}] is degenerate")
        if not (-90.0 <= self.elevation[0] and self.elevation[1] <= 90.0):
            raise ValidationError("renderer.views.elevation must lie within [-90, 90]")
        if self.radius is not None and not self.radius > 0:
            raise ValidationError("renderer.views.radius must be positive")


def camera_position(
    center: Sequence[float], radius: float, azimuth_deg: float, elevation_deg: float
) -> np.ndarray:
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    offset = np.array(
        [math.sin(az) * math.cos(el), math.sin(el), -math.cos(az) * math.cos(el)]
    )
    return np.asarray(center, dtype=np.float64) + radius * offset


def sample_angles(sampler: ViewSampler, iteration: int) -> np.ndarray:
    """``(count, 2)`` array of (azimuth, elevation) degrees, fixed by (seed, iteration)."""
    rng = np.random.default_rng([int(sampler.seed), int(iteration)])
    azimuth = rng.uniform(*sampler.azimuth, size=sampler.count)
    elevation = rng.uniform(*sampler.elevation, size=sampler.count)
    return np.stack([azimuth, elevation], axis=1)


def sample_novel_views(
    sampler: ViewSampler, iteration: int, intrinsics: CameraSpec | None = None
) -> list[CameraSpec]:
    """Cameras looking at the sampler center from random directions.

    Args:
        sampler: View distribution; ``radius`` and ``center`` default to 2 and ``(0, 0, radius)``.
        iteration: Optimizer iteration, mixed into the seed.
        intrinsics: Camera whose size, focal length and projection every view reuses.
    """
    radius = sampler.radius if sampler.radius is not None else 2.0
    center = sampler.center if sampler.center is not None else (0.0, 0.0, radius)
    if intrinsics is None:
        intrinsics = CameraSpec(np.eye(4), 128, 128, focal=128.0 * radius)
    cameras = []
    for azimuth, elevation in sample_angles(sampler, iteration):
        eye = camera_position(center, radius, azimuth, elevation)
        cameras.append(with_pose(intrinsics, look_at(eye, center)))
    return cameras


def dump_views(
    renders: Sequence[RenderOutput], run_dir: str | pathlib.Path, iteration: int
) -> list[pathlib.Path]:
    """Write each view as ``views/iter_<iteration>_view_<k>.png``."""
    folder = pathlib.Path(run_dir) / "views"
    return [
        write_png(folder / f"iter_{iteration:05d}_view_{k:02d}.png", out.to_image())
        for k, out in enumerate(renders)
    ]


__all__ = ["ViewSampler", "camera_position", "dump_views", "sample_angles", "sample_novel_views"]
