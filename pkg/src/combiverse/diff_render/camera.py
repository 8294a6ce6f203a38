"""Camera construction and projection.

Conventions:

- A camera looks along its local +z axis, with +x right and +y up.
- ``pose`` is camera-to-world; its rotation columns are (right, up, forward).
- Pixel centers sit at ``(j + 0.5, i + 0.5)`` for row ``i`` and column ``j``.
- Pinhole: ``u = cx + f * x / z`` and ``v = cy - f * y / z``.
- Orthographic: ``u = cx + f * x`` and ``v = cy - f * y`` (``f`` in pixels per scene unit).

Reference camera calibration: the reference view sits at the origin with
identity pose. Its render keeps the input image's aspect ratio with the
long side at ``resolution`` pixels. Its focal length is

    f = (render_width / W_I) / pixel_to_scene * d_ref

where ``d_ref`` is the mean initial object depth. A box center at pixel
``X_b`` then reprojects to ``(X_b / W_I) * render_width`` for an object at
depth ``d_ref``, and a unit cube scaled by ``init_scale`` covers its box.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import torch

from combiverse.errors import ValidationError
from combiverse.scene_model.types import CameraSpec


def render_size(image_size: tuple[int, int], resolution: int) -> tuple[int, int]:
    """Render ``(width, height)`` with the long side at ``resolution``."""
    width, height = image_size
    if width >= height:
        return resolution, max(1, round(resolution * height / width))
    return max(1, round(resolution * width / height)), resolution


def look_at(
    eye: Sequence[float], target: Sequence[float], world_up: Sequence[float] = (0.0, 1.0, 0.0)
) -> np.ndarray:
    """Camera-to-world pose for a camera at ``eye`` looking at ``target``."""
    eye_v = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye_v
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValidationError("camera eye and target coincide")
    forward /= norm
    up_hint = np.asarray(world_up, dtype=np.float64)
    right = np.cross(up_hint, forward)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(np.array([0.0, 0.0, -1.0]), forward)
    right /= np.linalg.norm(right)
    up = np.cross(forward, right)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, up, forward, eye_v
    return pose


def reference_camera(
    image_size: tuple[int, int],
    resolution: int,
    depth_ref: float,
    *,
    pixel_to_scene: float | None = None,
    orthographic: bool = False,
) -> CameraSpec:
    """Camera matching the input image (see module docstring for the calibration)."""
    width, height = render_size(image_size, resolution)
    k = 1.0 / image_size[0] if pixel_to_scene is None else pixel_to_scene
    px_per_unit = (width / image_size[0]) / k
    if orthographic:
        return CameraSpec(np.eye(4), width, height, focal=px_per_unit, orthographic=True)
    if not depth_ref > 0:
        raise ValidationError(f"reference depth must be positive, got {depth_ref}")
    return CameraSpec(np.eye(4), width, height, focal=px_per_unit * depth_ref)


def with_pose(camera: CameraSpec, pose: np.ndarray) -> CameraSpec:
    return CameraSpec(
        pose,
        camera.width,
        camera.height,
        camera.focal,
        camera.principal_point,
        camera.orthographic,
    )


def project(
    points: torch.Tensor, camera: CameraSpec, near: float
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """World points ``(N, 3)`` to pixel coordinates ``u, v`` and camera depth ``z``.

    Depth below ``near`` is clamped before division so projections stay finite;
    callers mask those points out.
    """
    pose = torch.as_tensor(camera.pose, dtype=points.dtype, device=points.device)
    cam = (points - pose[:3, 3]) @ pose[:3, :3]
    x, y, z = cam.unbind(-1)
    cx, cy = camera.principal_point
    if camera.orthographic:
        return cx + camera.focal * x, cy - camera.focal * y, z
    z_safe = torch.where(z > near, z, torch.full_like(z, near))
    return cx + camera.focal * x / z_safe, cy - camera.focal * y / z_safe, z


__all__ = ["look_at", "project", "reference_camera", "render_size", "with_pose"]
