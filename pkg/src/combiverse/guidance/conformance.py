"""Attention-scaling contract check for score providers.

A conforming provider exposes at least one cross-attention site and:

(a) returns row-stochastic attention maps when unscaled;
(b) multiplies exactly the designated token columns by ``c`` at every site,
    leaving every other column unchanged;
(c) produces the unscaled prediction when called with ``c = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from combiverse.errors import BackendError, ConformanceError
from combiverse.guidance.attention import TokenScaling
from combiverse.guidance.diffusion import NoiseHint, ScoreProvider
from combiverse.utils_logger import logger

ROW_TOLERANCE = 1e-6
SCALE_TOLERANCE = 1e-9
DRIFT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class ConformanceReport:
    sites: int
    row_error: float
    scale_error: float
    drift: float
    passed: tuple[str, ...] = field(default=("a", "b", "c"))


def _as_maps(raw) -> list[np.ndarray]:
    return [np.asarray(m, dtype=np.float64) for m in raw]


def provider_conformance_check(
    provider: ScoreProvider,
    *,
    caption: str = "a squirrel is sitting on a box",
    token_indices: tuple[int, ...] = (3,),
    multiplier: float = 25.0,
    sample_shape: tuple[int, int, int] = (3, 16, 16),
    seed: int = 0,
) -> ConformanceReport:
    """Run the three contract checks against ``provider``.

    Raises:
        ConformanceError: A check fails; ``check`` names it ("a", "b" or "c").
        BackendError: The provider could not be queried.
    """
    scaling = TokenScaling.of(token_indices, multiplier)
    try:
        embedding = provider.encode_prompt(caption)
        plain = _as_maps(provider.introspect_attention(embedding, None))
        scaled = _as_maps(provider.introspect_attention(embedding, scaling))
    except ConformanceError:
        raise
    except Exception as e:
        raise BackendError("score", f"attention introspection failed: {e}") from e

    if not plain:
        raise ConformanceError("a", "provider exposes no cross-attention site")
    row_error = max(float(np.max(np.abs(m.sum(axis=-1) - 1.0))) for m in plain)
    if not row_error <= ROW_TOLERANCE:
        raise ConformanceError("a", f"attention rows deviate from 1 by {row_error:.3e}")

    if len(scaled) != len(plain):
        raise ConformanceError("b", f"{len(plain)} sites unscaled but {len(scaled)} scaled")
    scale_error = 0.0
    for site, (before, after) in enumerate(zip(plain, scaled, strict=True)):
        if before.shape != after.shape:
            raise ConformanceError("b", f"site {site} changed shape under scaling")
        expected = before.copy()
        expected[..., list(scaling.token_indices)] *= scaling.multiplier
        error = float(np.max(np.abs(after - expected)))
        scale_error = max(scale_error, error)
        if not error <= SCALE_TOLERANCE * max(1.0, scaling.multiplier):
            raise ConformanceError(
                "b", f"site {site} differs from column scaling by {error:.3e}"
            )

    rng = np.random.default_rng(seed)
    clean = torch.as_tensor(rng.uniform(0.0, 1.0, sample_shape))
    noise = torch.as_tensor(rng.standard_normal(sample_shape))
    t = 850
    alpha, sigma = provider.schedule.coefficients(t)
    noisy = alpha * clean + sigma * noise
    hint = NoiseHint(clean=clean, noise=noise)
    try:
        unscaled = provider.predict_noise(noisy, embedding, t, None, hint=hint)
        unit = provider.predict_noise(
            noisy, embedding, t, TokenScaling.of(token_indices, 1.0), hint=hint
        )
    except Exception as e:
        raise BackendError("score", f"noise prediction failed: {e}") from e
    drift = float(torch.max(torch.abs(torch.as_tensor(unit) - torch.as_tensor(unscaled))))
    if not drift <= DRIFT_TOLERANCE:
        raise ConformanceError("c", f"c = 1 output drifts from unscaled by {drift:.3e}")

    report = ConformanceReport(
        sites=len(plain), row_error=row_error, scale_error=scale_error, drift=drift
    )
    logger.info(f"Score provider passed conformance on {report.sites} site(s), drift {drift:.2e}")
    return report


__all__ = ["ConformanceReport", "provider_conformance_check"]
