"""Optimizer settings for the combination loop."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import asdict, dataclass
from typing import Any

from combiverse.errors import ConfigurationError

PARAMETER_GROUPS = ("scale", "rotation", "translation_xy", "translation_z")


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam over placement parameters, with its own rate for depth translation.

    Attributes:
        lr_translation_z: Learning rate of the z translation.
        lr_default: Learning rate of every other parameter.
        iterations: Optimizer steps.
        seed: Seed of every per-iteration random stream.
        trainable: Parameter groups the optimizer may change.
        fixed_objects: Object indices kept at their initial placement.
        checkpoint_every: Iterations between checkpoints (0 disables them).
        eps: Adam epsilon.
    """

    lr_translation_z: float = 0.01
    lr_default: float = 0.001
    iterations: int = 500
    seed: int = 0
    trainable: tuple[str, ...] = PARAMETER_GROUPS
    fixed_objects: tuple[int, ...] = ()
    checkpoint_every: int = 50
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if not self.lr_translation_z > 0 or not self.lr_default > 0:
            raise ConfigurationError("optimizer.lr_default", "learning rates must be positive")
        if self.iterations < 1:
            raise ConfigurationError("optimizer.iterations", "must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigurationError("optimizer.checkpoint_every", "must be >= 0")
        if not self.eps > 0:
            raise ConfigurationError("optimizer.eps", "must be positive")
        trainable = tuple(self.trainable)
        bad = [name for name in trainable if name not in PARAMETER_GROUPS]
        if bad:
            raise ConfigurationError("optimizer.trainable", f"unknown groups {bad}; choose from {PARAMETER_GROUPS}")
        object.__setattr__(self, "trainable", trainable)
        object.__setattr__(self, "fixed_objects", tuple(sorted({int(i) for i in self.fixed_objects})))

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["trainable"] = list(self.trainable)
        data["fixed_objects"] = list(self.fixed_objects)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> OptimizerConfig:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"optimizer.{sorted(unknown)[0]}", "unknown key")
        values = dict(data)
        for key in ("trainable", "fixed_objects"):
            if key in values:
                if not isinstance(values[key], (list, tuple)):
                    raise ConfigurationError(f"optimizer.{key}", "expected a list")
                values[key] = tuple(values[key])
        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigurationError("optimizer", str(e)) from e


__all__ = ["PARAMETER_GROUPS", "OptimizerConfig"]
