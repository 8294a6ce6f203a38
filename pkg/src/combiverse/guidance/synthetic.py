"""Analytic score provider for desk-scale experiments.

The provider predicts ``eps + grad_x(sum_j u_j * ramp_j(t) * w_j * phi_j(x))``
for a set of image potentials ``phi_j``, each tied to a caption token.
``u_j`` is the ratio of summed reweighted to summed raw attention for that
token, averaged over the provider's attention sites: exactly ``c`` for a
scaled token and exactly 1 otherwise. Scaling the attention of a spatial
token therefore amplifies the potential tied to it.

Potential kinds (``x`` is a channel-first image ``(C, H, W)``):

- ``quadratic``: ``0.5 * sum((x - target)^2)``; ``target`` a scalar or one value per channel.
- ``mass``: ``0.5 * (mean(x[channel]) - target)^2``.
- ``centroid``: ``0.5 * ||centroid(x[channel]) - centroid(x[reference_channel]) - offset||^2``,
  with centroids in scene-like coordinates (x right, y up, image spanning [-0.5, 0.5]
  across its width); without a reference channel the offset is an absolute target.
- ``anchor``: ``0.5 * sum((x - anchor)^2)`` against a fixed image.

An optional jitter adds ``noise_floor * eps`` to the prediction for
timesteps below ``noise_cutoff``, modelling unreliable low-noise estimates.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
import zlib
from typing import Any

import numpy as np
import torch

from combiverse.errors import ValidationError
from combiverse.guidance.attention import TokenScaling, attention_maps, reweight_attention
from combiverse.guidance.diffusion import NoiseHint, NoiseSchedule
from combiverse.scene_model.tokenizer import tokenize_caption

POTENTIAL_KINDS = ("quadratic", "mass", "centroid", "anchor")


@dataclass(frozen=True, eq=False)
class PotentialTerm:
    token: int
    kind: str
    weight: float = 1.0
    target: float | tuple[float, ...] = 0.0
    channel: int = 0
    reference_channel: int | None = None
    offset: tuple[float, float] = (0.0, 0.0)
    anchor: np.ndarray | None = None
    ramp: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.kind not in POTENTIAL_KINDS:
            raise ValidationError(f"unknown potential kind {self.kind!r}; choose from {POTENTIAL_KINDS}")
        if self.token < 0:
            raise ValidationError("potential token index must be non-negative")
        if not self.weight >= 0:
            raise ValidationError("potential weight must be non-negative")
        if self.kind == "anchor" and self.anchor is None:
            raise ValidationError("an anchor potential needs an anchor image")
        if self.ramp is not None and not self.ramp[0] < self.ramp[1]:
            raise ValidationError(f"potential ramp {self.ramp} must be increasing")
        if len(self.offset) != 2:
            raise ValidationError("centroid offset needs two components")

    def ramp_factor(self, t: int) -> float:
        """0 below ``ramp[0]``, 1 above ``ramp[1]``, linear in between."""
        if self.ramp is None:
            return 1.0
        low, high = self.ramp
        return float(min(1.0, max(0.0, (t - low) / (high - low))))


@dataclass(frozen=True, eq=False)
class SyntheticSpec:
    caption: str
    terms: tuple[PotentialTerm, ...] = ()
    sites: int = 2
    queries: int = 16
    dim: int = 8
    seed: int = 0
    noise_floor: float = 0.0
    noise_cutoff: int = 0


@dataclass(frozen=True, eq=False)
class SyntheticEmbedding:
    tokens: tuple[str, ...]
    keys: np.ndarray


def pixel_coordinates(height: int, width: int, dtype=torch.float64) -> tuple[torch.Tensor, torch.Tensor]:
    """Pixel-center coordinates with x right, y up, one unit per image width."""
    xs = (torch.arange(width, dtype=dtype) + 0.5) / width - 0.5
    ys = (height / width) * 0.5 - (torch.arange(height, dtype=dtype) + 0.5) / width
    return xs[None, :].expand(height, width), ys[:, None].expand(height, width)


def channel_centroid(channel: torch.Tensor, eps: float = 1e-9) -> torch.Tensor:
    height, width = channel.shape
    xs, ys = pixel_coordinates(height, width, channel.dtype)
    mass = channel.sum() + eps
    return torch.stack([(channel * xs).sum() / mass, (channel * ys).sum() / mass])


def potential_value(term: PotentialTerm, x: torch.Tensor) -> torch.Tensor:
    if term.kind == "quadratic":
        target = torch.as_tensor(term.target, dtype=x.dtype)
        if target.ndim == 1:
            target = target[:, None, None]
        return 0.5 * ((x - target) ** 2).sum()
    if term.kind == "mass":
        return 0.5 * (x[term.channel].mean() - float(np.asarray(term.target).ravel()[0])) ** 2
    if term.kind == "centroid":
        offset = torch.as_tensor(term.offset, dtype=x.dtype)
        position = channel_centroid(x[term.channel])
        if term.reference_channel is not None:
            position = position - channel_centroid(x[term.reference_channel])
        return 0.5 * ((position - offset) ** 2).sum()
    anchor = torch.as_tensor(np.asarray(term.anchor), dtype=x.dtype)
    if anchor.shape != x.shape:
        raise ValidationError(f"anchor image {tuple(anchor.shape)} does not match {tuple(x.shape)}")
    return 0.5 * ((x - anchor) ** 2).sum()


class SyntheticScoreProvider:
    """Score provider whose noise residual is the gradient of token-weighted potentials."""

    def __init__(self, spec: SyntheticSpec) -> None:
        self.spec = spec
        self.schedule = NoiseSchedule.unit()
        self._queries = [
            np.random.default_rng([spec.seed, site]).standard_normal((spec.queries, spec.dim))
            for site in range(spec.sites)
        ]
        n_tokens = len(self.tokenize(spec.caption))
        for term in spec.terms:
            if term.token >= n_tokens:
                raise ValidationError(
                    f"potential token {term.token} outside caption of {n_tokens} tokens"
                )

    def tokenize(self, caption: str) -> list[str]:
        return tokenize_caption(caption)

    def encode_prompt(self, caption: str) -> SyntheticEmbedding:
        tokens = tuple(self.tokenize(caption))
        keys = np.stack(
            [
                np.random.default_rng([self.spec.seed, zlib.crc32(tok.encode("utf-8")), pos])
                .standard_normal(self.spec.dim)
                for pos, tok in enumerate(tokens)
            ]
        )
        return SyntheticEmbedding(tokens, keys)

    def introspect_attention(
        self, embedding: SyntheticEmbedding, scaling: TokenScaling | None = None
    ) -> list[np.ndarray]:
        return [
            reweight_attention(attention_maps(q, embedding.keys), scaling) for q in self._queries
        ]

    def token_multipliers(
        self, embedding: SyntheticEmbedding, scaling: TokenScaling | None
    ) -> np.ndarray:
        """Per-token amplification: summed reweighted over summed raw attention, site-averaged."""
        ratios = []
        for q in self._queries:
            raw = attention_maps(q, embedding.keys)
            ratios.append(reweight_attention(raw, scaling).sum(axis=0) / raw.sum(axis=0))
        return np.sum(ratios, axis=0) / len(ratios)

    def potential(
        self,
        x: torch.Tensor,
        embedding: SyntheticEmbedding,
        timestep: int,
        scaling: TokenScaling | None = None,
    ) -> torch.Tensor:
        """Token-weighted potential at ``x``."""
        u = self.token_multipliers(embedding, scaling)
        total = torch.zeros((), dtype=x.dtype)
        for term in self.spec.terms:
            factor = float(u[term.token]) * term.ramp_factor(timestep) * term.weight
            total = total + factor * potential_value(term, x)
        return total

    def predict_noise(
        self,
        noisy: torch.Tensor,
        embedding: SyntheticEmbedding,
        timestep: int,
        scaling: TokenScaling | None = None,
        *,
        hint: NoiseHint | None = None,
    ) -> torch.Tensor:
        if hint is None:
            raise ValidationError("the synthetic provider needs the clean image and noise")
        if hint.clean.shape != noisy.shape:
            raise ValidationError("noise hint does not match the noisy image")
        with torch.enable_grad():
            x = hint.clean.detach().clone().requires_grad_(True)
            value = self.potential(x, embedding, timestep, scaling)
            if value.requires_grad:
                (grad,) = torch.autograd.grad(value, x)
            else:
                grad = torch.zeros_like(x)
        predicted = hint.noise + grad
        if self.spec.noise_floor > 0 and timestep < self.spec.noise_cutoff:
            predicted = predicted + self.spec.noise_floor * hint.noise
        return predicted.detach()


# -------------------------------------------------------------------
# Spec parsing
# -------------------------------------------------------------------


def _term_from_mapping(raw: Mapping[str, Any], index: int) -> PotentialTerm:
    allowed = {f.name for f in PotentialTerm.__dataclass_fields__.values()}
    unknown = set(raw) - allowed
    if unknown:
        raise ValidationError(f"terms[{index}]: unknown keys {sorted(unknown)}")
    if "token" not in raw or "kind" not in raw:
        raise ValidationError(f"terms[{index}]: 'token' and 'kind' are required")
    data = dict(raw)
    for key in ("offset", "ramp"):
        if data.get(key) is not None:
            data[key] = tuple(data[key])
    if isinstance(data.get("target"), list):
        data["target"] = tuple(data["target"])
    if data.get("anchor") is not None:
        data["anchor"] = np.asarray(data["anchor"], dtype=np.float64)
    try:
        return PotentialTerm(**data)
    except TypeError as e:
        raise ValidationError(f"terms[{index}]: {e}") from e


def synthetic_score_provider(spec: SyntheticSpec | Mapping[str, Any]) -> SyntheticScoreProvider:
    """Build a synthetic provider from a spec object or a plain mapping.

    Raises:
        ValidationError: The spec is malformed.
    """
    if isinstance(spec, SyntheticSpec):
        return SyntheticScoreProvider(spec)
    if not isinstance(spec, Mapping):
        raise ValidationError("synthetic provider spec must be a mapping")
    if "caption" not in spec:
        raise ValidationError("synthetic provider spec needs a caption")
    raw_terms = spec.get("terms", [])
    if not isinstance(raw_terms, Sequence) or isinstance(raw_terms, str):
        raise ValidationError("synthetic provider terms must be a list")
    terms = tuple(_term_from_mapping(t, i) for i, t in enumerate(raw_terms))
    options = {k: spec[k] for k in ("sites", "queries", "dim", "seed", "noise_floor", "noise_cutoff") if k in spec}
    unknown = set(spec) - {"caption", "terms", *options}
    if unknown:
        raise ValidationError(f"unknown synthetic provider keys {sorted(unknown)}")
    if int(options.get("sites", 2)) < 1:
        raise ValidationError("synthetic provider needs at least one attention site")
    return SyntheticScoreProvider(SyntheticSpec(caption=spec["caption"], terms=terms, **options))


__all__ = [
    "POTENTIAL_KINDS",
    "PotentialTerm",
    "SyntheticEmbedding",
    "SyntheticScoreProvider",
    "SyntheticSpec",
    "channel_centroid",
    "pixel_coordinates",
    "potential_value",
    "synthetic_score_provider",
]
