"""Guidance settings and the named presets used by the ablation runs."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import asdict, dataclass, replace
from typing import Any

from combiverse.errors import ConfigurationError, ValidationError
from combiverse.guidance.attention import TokenScaling
from combiverse.guidance.diffusion import TOTAL_STEPS, WEIGHTINGS, TimestepSampler

GUIDANCE_MODES = ("base", "depth", "sds", "ssds")
GUIDANCE_VIEWS = ("novel", "reference")


@dataclass(frozen=True)
class GuidanceConfig:
    """Which guidance term drives the combination and how strongly.

    ``token_indices`` names the spatial tokens scaled in ``ssds`` mode; when
    ``None`` the scene's ``spatial_token_indices`` are used.
    """

    mode: str = "ssds"
    multiplier: float = 25.0
    timesteps: tuple[int, int] = (800, 900)
    lambda_ref: float = 1.0
    lambda_guidance: float = 1.0
    lambda_rgb: float = 1000.0
    lambda_alpha: float = 1000.0
    weighting: str = "constant"
    guidance_view: str = "novel"
    token_indices: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.mode not in GUIDANCE_MODES:
            raise ConfigurationError("guidance.mode", f"{self.mode!r} not in {GUIDANCE_MODES}")
        if self.guidance_view not in GUIDANCE_VIEWS:
            raise ConfigurationError(
                "guidance.guidance_view", f"{self.guidance_view!r} not in {GUIDANCE_VIEWS}"
            )
        for name in ("lambda_ref", "lambda_guidance", "lambda_rgb", "lambda_alpha"):
            value = getattr(self, name)
            if not value >= 0:
                raise ConfigurationError(f"guidance.{name}", f"must be >= 0, got {value}")
        if not self.multiplier > 0:
            raise ConfigurationError("guidance.multiplier", "must be positive")
        low, high = self.timesteps
        if not 0 < low <= high < TOTAL_STEPS:
            raise ConfigurationError(
                "guidance.timesteps", f"[{low}, {high}] must satisfy 0 < low <= high < {TOTAL_STEPS}"
            )
        if self.weighting not in WEIGHTINGS:
            raise ConfigurationError("guidance.weighting", f"unknown weighting {self.weighting!r}")
        object.__setattr__(self, "timesteps", (int(low), int(high)))
        if self.token_indices is not None:
            object.__setattr__(self, "token_indices", tuple(int(j) for j in self.token_indices))

    def sampler(self, seed: int) -> TimestepSampler:
        return TimestepSampler(*self.timesteps, seed=seed)

    def scaling(self, spatial_token_indices: tuple[int, ...] = ()) -> TokenScaling | None:
        """Token scaling for ``ssds`` mode, ``None`` otherwise.

        Raises:
            ValidationError: ``ssds`` mode without any spatial token.
        """
        if self.mode != "ssds":
            return None
        indices = self.token_indices if self.token_indices is not None else spatial_token_indices
        if not indices:
            raise ValidationError("ssds guidance needs at least one spatial token index")
        return TokenScaling.of(indices, self.multiplier)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["timesteps"] = list(self.timesteps)
        if self.token_indices is not None:
            data["token_indices"] = list(self.token_indices)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], prefix: str = "guidance") -> GuidanceConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"{prefix}.{sorted(unknown)[0]}", "unknown key")
        values = dict(data)
        if "timesteps" in values:
            ts = values["timesteps"]
            if not isinstance(ts, (list, tuple)) or len(ts) != 2:
                raise ConfigurationError(f"{prefix}.timesteps", "expected [low, high]")
            values["timesteps"] = tuple(ts)
        if values.get("token_indices") is not None:
            values["token_indices"] = tuple(values["token_indices"])
        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigurationError(prefix, str(e)) from e


# Ablation presets: every entry is a full GuidanceConfig built from the defaults.
PRESETS: dict[str, dict[str, Any]] = {
    "base": {"mode": "base"},
    "depth": {"mode": "depth"},
    "sds": {"mode": "sds"},
    "ssds-low": {"mode": "ssds", "timesteps": (100, 200)},
    "ssds-uniform": {"mode": "ssds", "timesteps": (20, 980)},
    "ssds-full": {"mode": "ssds", "timesteps": (800, 900)},
}


def guidance_preset(name: str, base: GuidanceConfig | None = None) -> GuidanceConfig:
    """Preset ``name`` applied on top of ``base`` (defaults when omitted)."""
    try:
        overrides = PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown guidance preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base or GuidanceConfig(), **overrides)


__all__ = ["GUIDANCE_MODES", "GUIDANCE_VIEWS", "PRESETS", "GuidanceConfig", "guidance_preset"]
