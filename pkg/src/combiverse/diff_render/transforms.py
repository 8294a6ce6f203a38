"""Differentiable similarity transforms: ``v' = R(r) (s v) + t``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from combiverse.errors import ValidationError
from combiverse.scene_model.mesh import TriangleMesh
from combiverse.scene_model.types import PlacementParams


@dataclass
class Placement:
    """Tensor form of :class:`PlacementParams`, possibly carrying gradients."""

    scale: torch.Tensor
    rotation: torch.Tensor
    translation: torch.Tensor

    @classmethod
    def from_params(
        cls,
        params: PlacementParams,
        *,
        dtype: torch.dtype = torch.float64,
        requires_grad: bool = False,
    ) -> Placement:
        def leaf(value) -> torch.Tensor:
            return torch.tensor(value, dtype=dtype, requires_grad=requires_grad)

        return cls(leaf(params.scale), leaf(list(params.rotation)), leaf(list(params.translation)))

    def to_params(self) -> PlacementParams:
        return PlacementParams(
            scale=float(self.scale.detach()),
            rotation=tuple(self.rotation.detach().tolist()),
            translation=tuple(self.translation.detach().tolist()),
        )

    def check_finite(self) -> None:
        for name in ("scale", "rotation", "translation"):
            if not bool(torch.isfinite(getattr(self, name)).all()):
                raise ValidationError(f"placement {name} is not finite")


def euler_matrix(rotation: torch.Tensor) -> torch.Tensor:
    """Rotation matrix for extrinsic X-Y-Z Euler angles: ``Rz @ Ry @ Rx``."""
    rx, ry, rz = rotation.unbind(-1)
    one, zero = torch.ones_like(rx), torch.zeros_like(rx)
    cx, sx = torch.cos(rx), torch.sin(rx)
    cy, sy = torch.cos(ry), torch.sin(ry)
    cz, sz = torch.cos(rz), torch.sin(rz)
    r_x = torch.stack([one, zero, zero, zero, cx, -sx, zero, sx, cx]).reshape(3, 3)
    r_y = torch.stack([cy, zero, sy, zero, one, zero, -sy, zero, cy]).reshape(3, 3)
    r_z = torch.stack([cz, -sz, zero, sz, cz, zero, zero, zero, one]).reshape(3, 3)
    return r_z @ r_y @ r_x


def apply_transform(
    mesh: TriangleMesh | np.ndarray | torch.Tensor,
    params: PlacementParams | Placement,
    *,
    dtype: torch.dtype = torch.float64,
) -> torch.Tensor:
    """Scale, then rotate, then translate every vertex.

    Gradients flow to ``params`` when it is a :class:`Placement` with
    ``requires_grad`` leaves.

    Raises:
        ValidationError: A parameter is not finite.
    """
    placement = params if isinstance(params, Placement) else Placement.from_params(params, dtype=dtype)
    placement.check_finite()
    raw = mesh.vertices if isinstance(mesh, TriangleMesh) else mesh
    vertices = raw.to(dtype) if torch.is_tensor(raw) else torch.tensor(np.array(raw), dtype=dtype)
    rotation = euler_matrix(placement.rotation.to(dtype))
    return (placement.scale.to(dtype) * vertices) @ rotation.T + placement.translation.to(dtype)


__all__ = ["Placement", "apply_transform", "euler_matrix"]
