"""Optimizable placement variables.

Scale is stored as ``log s`` so unconstrained steps keep it positive.
Translation is split into its image-plane part and its depth so the two can
use different learning rates.
"""

from __future__ import annotations

from collections.abc import Sequence
import math

import numpy as np
import torch

from combiverse.combiner.config import PARAMETER_GROUPS, OptimizerConfig
from combiverse.diff_render.transforms import Placement
from combiverse.errors import ValidationError
from combiverse.scene_model.types import PlacementParams


class PlacementVariables:
    """Per-object leaf tensors, keyed ``(object, group)``."""

    def __init__(
        self,
        init: Sequence[PlacementParams],
        *,
        trainable: Sequence[str] = PARAMETER_GROUPS,
        fixed_objects: Sequence[int] = (),
        dtype: torch.dtype = torch.float64,
    ) -> None:
        if not init:
            raise ValidationError("no placements to optimize")
        bad = [i for i in fixed_objects if not 0 <= i < len(init)]
        if bad:
            raise ValidationError(f"fixed object indices {bad} out of range for {len(init)} objects")
        self.dtype = dtype
        self.tensors: list[dict[str, torch.Tensor]] = []
        for index, params in enumerate(init):
            movable = index not in fixed_objects
            values = {
                "scale": [math.log(params.scale)],
                "rotation": list(params.rotation),
                "translation_xy": list(params.translation[:2]),
                "translation_z": [params.translation[2]],
            }
            self.tensors.append(
                {
                    group: torch.tensor(
                        value, dtype=dtype, requires_grad=movable and group in trainable
                    )
                    for group, value in values.items()
                }
            )

    def __len__(self) -> int:
        return len(self.tensors)

    def named(self) -> list[tuple[str, torch.Tensor]]:
        """Every leaf as ``("<object>.<group>", tensor)`` in a fixed order."""
        return [
            (f"{index}.{group}", tensors[group])
            for index, tensors in enumerate(self.tensors)
            for group in PARAMETER_GROUPS
        ]

    def trainable(self) -> list[torch.Tensor]:
        return [t for _, t in self.named() if t.requires_grad]

    def param_groups(self, config: OptimizerConfig) -> list[dict]:
        """Adam parameter groups: depth translation at its own rate, the rest at the default."""
        depth = [t for name, t in self.named() if t.requires_grad and name.endswith("translation_z")]
        other = [t for name, t in self.named() if t.requires_grad and not name.endswith("translation_z")]
        groups = []
        if other:
            groups.append({"params": other, "lr": config.lr_default, "name": "default"})
        if depth:
            groups.append({"params": depth, "lr": config.lr_translation_z, "name": "translation_z"})
        return groups

    def placements(self) -> list[Placement]:
        """Differentiable placements built from the current leaves."""
        return [
            Placement(
                scale=torch.exp(t["scale"][0]),
                rotation=t["rotation"],
                translation=torch.cat([t["translation_xy"], t["translation_z"]]),
            )
            for t in self.tensors
        ]

    def params(self) -> list[PlacementParams]:
        with torch.no_grad():
            return [p.to_params() for p in self.placements()]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.detach().cpu().numpy().copy() for name, t in self.named()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        with torch.no_grad():
            for name, tensor in self.named():
                if name not in arrays:
                    raise ValidationError(f"checkpoint lacks variable {name}")
                value = torch.as_tensor(np.array(arrays[name]), dtype=self.dtype)
                if value.shape != tensor.shape:
                    raise ValidationError(f"checkpoint variable {name} has shape {tuple(value.shape)}")
                tensor.copy_(value)


__all__ = ["PlacementVariables"]
