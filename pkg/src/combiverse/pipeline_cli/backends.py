"""Backend clients built from the ``backends`` section of a run config.

Mock backends take their variant from ``options.type``:

- segmenter: ``box`` (``leak``) or ``alpha`` (``threshold``)
- inpainter: ``identity`` or ``constant`` (``fill``)
- reconstructor: ``cube`` or ``icosphere`` (``subdivisions``, ``radius``)
- depth: ``near`` and optional ``far``
- score_provider: a synthetic provider spec; the caption defaults to the
  scene caption and an anchor term may use ``anchor: initial_render``.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from typing import Any

import numpy as np

from combiverse.decomposition.clients import (
    AlphaSegmenter,
    BoxSegmenter,
    ConstantFillInpainter,
    CubeReconstructor,
    HttpInpainter,
    HttpReconstructor,
    HttpSegmenter,
    IcosphereReconstructor,
    IdentityInpainter,
)
from combiverse.errors import ConfigurationError, ValidationError
from combiverse.guidance.external import HttpScoreProvider
from combiverse.guidance.synthetic import synthetic_score_provider
from combiverse.pipeline_cli.config import BackendConfig, DecompositionConfig, RunConfig
from combiverse.spatial_init.depth import HttpDepth, MockDepth

INITIAL_RENDER = "initial_render"


def _options(cfg: BackendConfig, name: str, allowed: set[str]) -> dict[str, Any]:
    unknown = sorted(set(cfg.options) - allowed)
    if unknown:
        raise ConfigurationError(f"backends.{name}.options.{unknown[0]}", "unknown option")
    return dict(cfg.options)


def _construct(name: str, factory: Callable[..., Any], **kwargs: Any) -> Any:
    try:
        return factory(**kwargs)
    except (ValidationError, TypeError) as e:
        raise ConfigurationError(f"backends.{name}.options", str(e)) from e


def build_segmenter(config: RunConfig):
    cfg = config.backend("segmenter")
    if cfg.kind == "external":
        return HttpSegmenter(cfg.endpoint, timeout_s=cfg.timeout_s)
    options = _options(cfg, "segmenter", {"type", "leak", "threshold"})
    kind = options.pop("type", "alpha")
    if kind == "box":
        return _construct("segmenter", BoxSegmenter, leak=int(options.get("leak", 0)))
    if kind == "alpha":
        return _construct("segmenter", AlphaSegmenter, threshold=int(options.get("threshold", 127)))
    raise ConfigurationError("backends.segmenter.options.type", f"unknown mock segmenter {kind!r}")


def build_inpainter(config: RunConfig):
    cfg = config.backend("inpainter")
    settings: DecompositionConfig = config.decomposition
    if cfg.kind == "external":
        return _construct(
            "inpainter",
            HttpInpainter,
            endpoint=cfg.endpoint,
            guidance_scale=settings.guidance_scale,
            num_steps=settings.num_steps,
            timeout_s=cfg.timeout_s,
        )
    options = _options(cfg, "inpainter", {"type", "fill"})
    kind = options.pop("type", "identity")
    common = {"guidance_scale": settings.guidance_scale, "num_steps": settings.num_steps}
    if kind == "identity":
        return _construct("inpainter", IdentityInpainter, **common)
    if kind == "constant":
        fill = tuple(options.get("fill", (128, 128, 128)))
        return _construct("inpainter", ConstantFillInpainter, fill=fill, **common)
    raise ConfigurationError("backends.inpainter.options.type", f"unknown mock inpainter {kind!r}")


def build_reconstructor(config: RunConfig):
    cfg = config.backend("reconstructor")
    if cfg.kind == "external":
        return HttpReconstructor(cfg.endpoint, timeout_s=cfg.timeout_s)
    options = _options(cfg, "reconstructor", {"type", "subdivisions", "radius"})
    kind = options.pop("type", "cube")
    if kind == "cube":
        return CubeReconstructor()
    if kind == "icosphere":
        return _construct("reconstructor", IcosphereReconstructor, **options)
    raise ConfigurationError("backends.reconstructor.options.type", f"unknown mock reconstructor {kind!r}")


def build_depth(config: RunConfig):
    cfg = config.backend("depth")
    if cfg.kind == "external":
        return HttpDepth(cfg.endpoint, timeout_s=cfg.timeout_s)
    options = _options(cfg, "depth", {"near", "far"})
    return _construct("depth", MockDepth, **options)


def needs_initial_render(config: RunConfig) -> bool:
    cfg = config.backend("score_provider")
    terms = cfg.options.get("terms", []) if cfg.kind == "mock" else []
    return any(isinstance(t, Mapping) and t.get("anchor") == INITIAL_RENDER for t in terms)


def build_score_provider(config: RunConfig, caption: str, initial_render: np.ndarray | None = None):
    """Score provider for the run; ``initial_render`` is ``(3, H, W)`` and fills anchor placeholders."""
    cfg = config.backend("score_provider")
    if cfg.kind == "external":
        return HttpScoreProvider(cfg.endpoint, timeout_s=cfg.timeout_s, retry=config.decomposition.retry)
    spec = dict(cfg.options)
    spec.setdefault("caption", caption)
    spec.setdefault("seed", config.seed)
    terms = []
    for i, term in enumerate(spec.get("terms", [])):
        if isinstance(term, Mapping) and term.get("anchor") == INITIAL_RENDER:
            if initial_render is None:
                raise ConfigurationError(
                    f"backends.score_provider.options.terms[{i}].anchor", "no initial render available"
                )
            term = {**term, "anchor": initial_render}
        terms.append(term)
    spec["terms"] = terms
    try:
        return synthetic_score_provider(spec)
    except ValidationError as e:
        raise ConfigurationError("backends.score_provider.options", str(e)) from e


__all__ = [
    "INITIAL_RENDER",
    "build_depth",
    "build_inpainter",
    "build_reconstructor",
    "build_score_provider",
    "build_segmenter",
    "needs_initial_render",
]
