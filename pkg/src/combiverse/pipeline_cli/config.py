"""Run configuration: one YAML document per run.

Every section maps onto a frozen dataclass. Unknown keys and bad values
raise :class:`ConfigurationError` naming the dotted field, for example
``guidance.timesteps`` or ``backends.depth.kind``.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
import os
import pathlib
from typing import Any

import yaml

from combiverse.backend_http import RetryPolicy
from combiverse.combiner.config import OptimizerConfig
from combiverse.decomposition.clients import DEFAULT_GUIDANCE_SCALE, DEFAULT_NUM_STEPS
from combiverse.decomposition.decompose import DEFAULT_PROMPT
from combiverse.decomposition.mesh_ops import DEFAULT_FACE_BUDGET
from combiverse.diff_render.rasterizer import RendererSettings
from combiverse.diff_render.views import ViewSampler
from combiverse.errors import ConfigurationError, ValidationError
from combiverse.guidance.config import GuidanceConfig

RUN_DIR_ENV = "COMBIVERSE_RUN_DIR"
BACKEND_NAMES = ("segmenter", "inpainter", "reconstructor", "depth", "score_provider")
BACKEND_KINDS = ("mock", "external")


def _mapping(value: Any, field_name: str) -> dict[str, Any]:
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise ConfigurationError(field_name, "expected a mapping")
    return dict(value)


def _reject_unknown(data: Mapping[str, Any], allowed: set[str] | frozenset[str], prefix: str) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigurationError(f"{prefix}.{unknown[0]}", "unknown key")


def _build(cls, data: dict[str, Any], prefix: str):
    try:
        return cls(**data)
    except ConfigurationError:
        raise
    except ValidationError as e:
        raise ConfigurationError(prefix, str(e)) from e
    except TypeError as e:
        raise ConfigurationError(prefix, str(e)) from e


# -------------------------------------------------------------------
# Sections
# -------------------------------------------------------------------


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"
    options: dict[str, Any] = field(default_factory=dict)
    endpoint: str | None = None
    timeout_s: float = 120.0

    def validate(self, name: str) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ConfigurationError(f"backends.{name}.kind", f"{self.kind!r} not in {BACKEND_KINDS}")
        if self.kind == "external" and not self.endpoint:
            raise ConfigurationError(f"backends.{name}.endpoint", "external backends need an endpoint")
        if not self.timeout_s > 0:
            raise ConfigurationError(f"backends.{name}.timeout_s", "must be positive")


@dataclass(frozen=True)
class DecompositionConfig:
    face_budget: int = DEFAULT_FACE_BUDGET
    prompt: str = DEFAULT_PROMPT
    guidance_scale: float = DEFAULT_GUIDANCE_SCALE
    num_steps: int = DEFAULT_NUM_STEPS
    retry_attempts: int = 3
    retry_base_delay: float = 0.5

    def __post_init__(self) -> None:
        if self.face_budget < 4:
            raise ConfigurationError("decomposition.face_budget", "must be >= 4")
        if not self.prompt.strip():
            raise ConfigurationError("decomposition.prompt", "must not be blank")
        if self.retry_attempts < 1:
            raise ConfigurationError("decomposition.retry_attempts", "must be >= 1")
        if self.retry_base_delay < 0:
            raise ConfigurationError("decomposition.retry_base_delay", "must be >= 0")

    @property
    def retry(self) -> RetryPolicy:
        return RetryPolicy(attempts=self.retry_attempts, base_delay=self.retry_base_delay)


@dataclass(frozen=True)
class SpatialInitConfig:
    pixel_to_scene: float | None = None

    def __post_init__(self) -> None:
        if self.pixel_to_scene is not None and not self.pixel_to_scene > 0:
            raise ConfigurationError("spatial_init.pixel_to_scene", "must be positive")


@dataclass(frozen=True)
class RunConfig:
    """Everything one pipeline run needs."""

    scene: pathlib.Path
    run_dir: pathlib.Path
    seed: int = 0
    workers: int = 1
    dump_every: int = 0
    backends: dict[str, BackendConfig] = field(
        default_factory=lambda: {name: BackendConfig() for name in BACKEND_NAMES}
    )
    decomposition: DecompositionConfig = field(default_factory=DecompositionConfig)
    spatial_init: SpatialInitConfig = field(default_factory=SpatialInitConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    renderer: RendererSettings = field(default_factory=RendererSettings)
    views: ViewSampler = field(default_factory=ViewSampler)

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ConfigurationError("workers", "must be >= 1")
        if self.dump_every < 0:
            raise ConfigurationError("dump_every", "must be >= 0")
        for name, backend in self.backends.items():
            backend.validate(name)

    def backend(self, name: str) -> BackendConfig:
        return self.backends.get(name, BackendConfig())

    def to_document(self) -> dict[str, Any]:
        """Plain mapping that :func:`parse_run_config` reads back to an equal config."""
        renderer = asdict(self.renderer)
        views = asdict(self.views)
        views.pop("seed")
        views["elevation"] = list(self.views.elevation)
        views["azimuth"] = list(self.views.azimuth)
        if self.views.center is not None:
            views["center"] = list(self.views.center)
        renderer["views"] = views
        optimizer = self.optimizer.to_dict()
        optimizer.pop("seed")
        return {
            "scene": str(self.scene),
            "run_dir": str(self.run_dir),
            "seed": self.seed,
            "workers": self.workers,
            "dump_every": self.dump_every,
            "backends": {name: asdict(cfg) for name, cfg in self.backends.items()},
            "decomposition": asdict(self.decomposition),
            "spatial_init": asdict(self.spatial_init),
            "guidance": self.guidance.to_dict(),
            "optimizer": optimizer,
            "renderer": renderer,
        }


RUN_KEYS = frozenset(
    {
        "scene",
        "run_dir",
        "seed",
        "workers",
        "dump_every",
        "backends",
        "decomposition",
        "spatial_init",
        "guidance",
        "optimizer",
        "renderer",
    }
)


def _parse_backends(raw: Any) -> dict[str, BackendConfig]:
    data = _mapping(raw, "backends")
    _reject_unknown(data, set(BACKEND_NAMES), "backends")
    backends = {}
    for name in BACKEND_NAMES:
        entry = _mapping(data.get(name), f"backends.{name}")
        _reject_unknown(entry, set(BackendConfig.__dataclass_fields__), f"backends.{name}")
        entry["options"] = _mapping(entry.get("options"), f"backends.{name}.options")
        backends[name] = _build(BackendConfig, entry, f"backends.{name}")
    return backends


def _parse_renderer(raw: Any, seed: int) -> tuple[RendererSettings, ViewSampler]:
    data = _mapping(raw, "renderer")
    views = _mapping(data.pop("views", None), "renderer.views")
    _reject_unknown(data, set(RendererSettings.__dataclass_fields__), "renderer")
    _reject_unknown(views, set(ViewSampler.__dataclass_fields__) - {"seed"}, "renderer.views")
    for key in ("elevation", "azimuth", "center"):
        if views.get(key) is not None:
            if not isinstance(views[key], list | tuple):
                raise ConfigurationError(f"renderer.views.{key}", "expected a list")
            views[key] = tuple(views[key])
    return (
        _build(RendererSettings, data, "renderer"),
        _build(ViewSampler, {**views, "seed": seed}, "renderer.views"),
    )


def _resolve_path(value: Any, field_name: str, base: pathlib.Path) -> pathlib.Path:
    if not isinstance(value, str) or not value:
        raise ConfigurationError(field_name, "must be a path")
    path = pathlib.Path(value).expanduser()
    return path if path.is_absolute() else base / path


def parse_run_config(
    data: Mapping[str, Any],
    *,
    base_dir: pathlib.Path | None = None,
    run_dir: str | pathlib.Path | None = None,
    seed: int | None = None,
) -> RunConfig:
    """Validate a parsed document.

    ``run_dir`` and ``seed`` override the document; without a ``run_dir`` in
    either place the ``COMBIVERSE_RUN_DIR`` environment variable is used.
    """
    if not isinstance(data, Mapping):
        raise ConfigurationError("config", "document must be a mapping")
    base = base_dir or pathlib.Path.cwd()
    data = dict(data)
    _reject_unknown(data, RUN_KEYS, "config")
    if "scene" not in data:
        raise ConfigurationError("scene", "required field is missing")
    scene = _resolve_path(data["scene"], "scene", base)

    if run_dir is not None:
        resolved_run_dir = pathlib.Path(run_dir)
    elif data.get("run_dir"):
        resolved_run_dir = _resolve_path(data["run_dir"], "run_dir", base)
    elif os.environ.get(RUN_DIR_ENV):
        resolved_run_dir = pathlib.Path(os.environ[RUN_DIR_ENV])
    else:
        raise ConfigurationError("run_dir", f"not set in the config, on the command line or in {RUN_DIR_ENV}")

    run_seed = seed if seed is not None else data.get("seed", 0)
    if not isinstance(run_seed, int) or isinstance(run_seed, bool) or run_seed < 0:
        raise ConfigurationError("seed", "must be a non-negative integer")
    for key in ("workers", "dump_every"):
        if key in data and (not isinstance(data[key], int) or isinstance(data[key], bool)):
            raise ConfigurationError(key, "must be an integer")

    decomposition = _mapping(data.get("decomposition"), "decomposition")
    _reject_unknown(decomposition, set(DecompositionConfig.__dataclass_fields__), "decomposition")
    spatial = _mapping(data.get("spatial_init"), "spatial_init")
    _reject_unknown(spatial, set(SpatialInitConfig.__dataclass_fields__), "spatial_init")
    optimizer = _mapping(data.get("optimizer"), "optimizer")
    if "seed" in optimizer:
        raise ConfigurationError("optimizer.seed", "set the run seed at the top level")
    renderer, views = _parse_renderer(data.get("renderer"), run_seed)

    return RunConfig(
        scene=scene,
        run_dir=resolved_run_dir,
        seed=run_seed,
        workers=data.get("workers", 1),
        dump_every=data.get("dump_every", 0),
        backends=_parse_backends(data.get("backends")),
        decomposition=_build(DecompositionConfig, decomposition, "decomposition"),
        spatial_init=_build(SpatialInitConfig, spatial, "spatial_init"),
        guidance=GuidanceConfig.from_dict(_mapping(data.get("guidance"), "guidance")),
        optimizer=OptimizerConfig.from_dict({**optimizer, "seed": run_seed}),
        renderer=renderer,
        views=views,
    )


def load_run_config(
    path: str | pathlib.Path,
    *,
    run_dir: str | pathlib.Path | None = None,
    seed: int | None = None,
) -> RunConfig:
    """Read a YAML run configuration; relative paths resolve against its folder."""
    path = pathlib.Path(path)
    if not path.exists():
        raise ConfigurationError("config", f"file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigurationError("config", f"not valid YAML: {e}") from e
    return parse_run_config(data or {}, base_dir=path.parent, run_dir=run_dir, seed=seed)


def default_config_document(scene: str = "scene.yaml", run_dir: str = "run") -> dict[str, Any]:
    """The default run configuration as a YAML-ready mapping."""
    return RunConfig(scene=pathlib.Path(scene), run_dir=pathlib.Path(run_dir)).to_document()


def save_run_config(document: Mapping[str, Any], path: str | pathlib.Path) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(dict(document), sort_keys=False), encoding="utf-8")
    return path


__all__ = [
    "BACKEND_KINDS",
    "BACKEND_NAMES",
    "RUN_DIR_ENV",
    "BackendConfig",
    "DecompositionConfig",
    "RunConfig",
    "SpatialInitConfig",
    "default_config_document",
    "load_run_config",
    "parse_run_config",
    "save_run_config",
]
