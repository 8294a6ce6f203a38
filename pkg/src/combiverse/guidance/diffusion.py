"""Score distillation: noise schedules, timestep sampling, and SDS/SSDS gradients.

The distillation gradient with respect to the rendered image ``x`` is
``w(t) * (eps_hat - eps)``, where ``eps_hat`` comes from the score
provider on ``x_t = alpha_t * x + sigma_t * eps``. It reaches the
placement parameters through the renderer's autograd graph: the surrogate
loss ``<x, stopgrad(g)>`` has gradient exactly ``g`` at ``x``.

Spatially-aware distillation is the same computation with the provider
called under a :class:`TokenScaling`; with ``c = 1`` both paths perform
identical arithmetic.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any, Protocol, runtime_checkable

import numpy as np
import torch

from combiverse.errors import BackendError, ValidationError
from combiverse.guidance.attention import TokenScaling

TOTAL_STEPS = 1000


# -------------------------------------------------------------------
# Noise schedule and timesteps
# -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-timestep coefficients of ``x_t = alpha_t * x + sigma_t * eps``."""

    alphas: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self) -> None:
        alphas = np.asarray(self.alphas, dtype=np.float64)
        sigmas = np.asarray(self.sigmas, dtype=np.float64)
        if alphas.shape != sigmas.shape or alphas.ndim != 1 or len(alphas) == 0:
            raise ValidationError("noise schedule needs equal-length 1-D coefficient arrays")
        if np.any(np.diff(alphas) > 0) or np.any(np.diff(sigmas) < 0):
            raise ValidationError("noise schedule must have non-increasing alpha and non-decreasing sigma")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "sigmas", sigmas)

    @classmethod
    def unit(cls, steps: int = TOTAL_STEPS) -> NoiseSchedule:
        """``alpha_t = sigma_t = 1`` for every ``t``."""
        return cls(np.ones(steps), np.ones(steps))

    @classmethod
    def linear(
        cls, steps: int = TOTAL_STEPS, beta_start: float = 1e-4, beta_end: float = 2e-2
    ) -> NoiseSchedule:
        """Variance-preserving schedule from linearly spaced betas."""
        betas = np.linspace(beta_start, beta_end, steps)
        alpha_bar = np.cumprod(1.0 - betas)
        return cls(np.sqrt(alpha_bar), np.sqrt(1.0 - alpha_bar))

    def __len__(self) -> int:
        return len(self.alphas)

    def coefficients(self, t: int) -> tuple[float, float]:
        if not 0 <= t < len(self):
            raise ValidationError(f"timestep {t} outside schedule of {len(self)} steps")
        return float(self.alphas[t]), float(self.sigmas[t])


class TimestepSampler:
    """Uniform integer timesteps in ``[low, high]`` with its own seeded stream."""

    def __init__(self, low: int = 800, high: int = 900, seed: int = 0) -> None:
        if not 0 < low <= high < TOTAL_STEPS:
            raise ValidationError(
                f"timestep range [{low}, {high}] must satisfy 0 < low <= high < {TOTAL_STEPS}"
            )
        self.low = int(low)
        self.high = int(high)
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def __repr__(self) -> str:
        return f"TimestepSampler(low={self.low}, high={self.high}, seed={self.seed})"


def sample_timestep(sampler: TimestepSampler, rng: np.random.Generator | None = None) -> int:
    """Draw ``t`` from the sampler's stream, or from ``rng`` when given."""
    generator = rng if rng is not None else sampler._rng
    return int(generator.integers(sampler.low, sampler.high, endpoint=True))


WeightFn = Callable[[int, NoiseSchedule], float]


def constant_weight(t: int, schedule: NoiseSchedule) -> float:
    return 1.0


def noise_variance_weight(t: int, schedule: NoiseSchedule) -> float:
    return schedule.coefficients(t)[1] ** 2


WEIGHTINGS: dict[str, WeightFn] = {
    "constant": constant_weight,
    "noise_variance": noise_variance_weight,
}


def weighting(name: str) -> WeightFn:
    try:
        return WEIGHTINGS[name]
    except KeyError:
        raise ValidationError(f"unknown weighting {name!r}; choose from {sorted(WEIGHTINGS)}") from None


# -------------------------------------------------------------------
# Provider contract
# -------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseHint:
    """The clean image and the injected noise behind a noisy input.

    Real providers ignore it; analytic providers use it to return an
    exact residual.
    """

    clean: torch.Tensor
    noise: torch.Tensor


@runtime_checkable
class ScoreProvider(Protocol):
    schedule: NoiseSchedule

    def tokenize(self, caption: str) -> list[str]: ...

    def encode_prompt(self, caption: str) -> Any: ...

    def predict_noise(
        self,
        noisy: torch.Tensor,
        embedding: Any,
        timestep: int,
        scaling: TokenScaling | None = None,
        *,
        hint: NoiseHint | None = None,
    ) -> torch.Tensor:
        """Predicted noise with the same shape as ``noisy`` ``(C, H, W)``."""
        ...

    def introspect_attention(
        self, embedding: Any, scaling: TokenScaling | None = None
    ) -> list[np.ndarray]:
        """Attention maps ``(N_q, N_k)`` at every hooked cross-attention site."""
        ...


# -------------------------------------------------------------------
# Distillation
# -------------------------------------------------------------------


@dataclass(frozen=True)
class DistillationStep:
    timestep: int
    residual_norm: float
    loss: float


def score_distillation_loss(
    x: torch.Tensor,
    provider: ScoreProvider,
    embedding: Any,
    schedule: NoiseSchedule,
    sampler: TimestepSampler,
    w_fn: WeightFn,
    scaling: TokenScaling | None,
    rng: np.random.Generator | None = None,
) -> tuple[torch.Tensor, DistillationStep]:
    """Surrogate loss whose gradient at ``x`` is ``w(t) * (eps_hat - eps)``.

    Args:
        x: Rendered image ``(C, H, W)``, part of an autograd graph.
        rng: Stream for ``t`` and ``eps``; defaults to the sampler's stream.

    Returns:
        tuple: The surrogate loss and a record of the draw.
    """
    generator = rng if rng is not None else sampler._rng
    t = sample_timestep(sampler, generator)
    noise = torch.as_tensor(generator.standard_normal(tuple(x.shape)), dtype=x.dtype)
    alpha, sigma = schedule.coefficients(t)
    clean = x.detach()
    noisy = alpha * clean + sigma * noise
    try:
        predicted = provider.predict_noise(
            noisy, embedding, t, scaling, hint=NoiseHint(clean=clean, noise=noise)
        )
    except (ValidationError, BackendError):
        raise
    except Exception as e:
        raise BackendError("score", str(e)) from e
    predicted = torch.as_tensor(predicted, dtype=x.dtype)
    if predicted.shape != x.shape:
        raise ValidationError(f"provider returned {tuple(predicted.shape)}, expected {tuple(x.shape)}")
    grad = (w_fn(t, schedule) * (predicted.detach() - noise)).detach()
    loss = (x * grad).sum()
    step = DistillationStep(
        timestep=t,
        residual_norm=float(torch.linalg.vector_norm(grad)),
        loss=float(0.5 * (grad**2).sum()),
    )
    return loss, step


def _gradients(
    x: torch.Tensor,
    params: Sequence[torch.Tensor],
    provider: ScoreProvider,
    embedding: Any,
    schedule: NoiseSchedule,
    sampler: TimestepSampler,
    w_fn: WeightFn,
    scaling: TokenScaling | None,
    rng: np.random.Generator | None,
) -> tuple[torch.Tensor, ...]:
    loss, _ = score_distillation_loss(x, provider, embedding, schedule, sampler, w_fn, scaling, rng)
    return torch.autograd.grad(loss, list(params), allow_unused=True, materialize_grads=True)


def sds_gradient(
    x: torch.Tensor,
    provider: ScoreProvider,
    embedding: Any,
    schedule: NoiseSchedule,
    sampler: TimestepSampler,
    w_fn: WeightFn,
    params: Sequence[torch.Tensor],
    *,
    rng: np.random.Generator | None = None,
) -> tuple[torch.Tensor, ...]:
    """Gradient of plain score distillation with respect to ``params``."""
    return _gradients(x, params, provider, embedding, schedule, sampler, w_fn, None, rng)


def ssds_gradient(
    x: torch.Tensor,
    provider: ScoreProvider,
    embedding: Any,
    schedule: NoiseSchedule,
    sampler: TimestepSampler,
    w_fn: WeightFn,
    scaling: TokenScaling,
    params: Sequence[torch.Tensor],
    *,
    rng: np.random.Generator | None = None,
) -> tuple[torch.Tensor, ...]:
    """Gradient of spatially-aware score distillation with respect to ``params``."""
    if scaling is None:
        raise ValidationError("spatially-aware distillation needs a token scaling")
    return _gradients(x, params, provider, embedding, schedule, sampler, w_fn, scaling, rng)


__all__ = [
    "TOTAL_STEPS",
    "WEIGHTINGS",
    "DistillationStep",
    "NoiseHint",
    "NoiseSchedule",
    "ScoreProvider",
    "TimestepSampler",
    "WeightFn",
    "constant_weight",
    "noise_variance_weight",
    "sample_timestep",
    "score_distillation_loss",
    "sds_gradient",
    "ssds_gradient",
    "weighting",
]
