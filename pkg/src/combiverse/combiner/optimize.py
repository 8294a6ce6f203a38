"""Multi-object combination by optimizing placements.

Module Information:
    - Filename: optimize.py
    - Module: combiner.optimize
    - Location: src/combiverse/combiner/

Key Concepts:
    - Only placements move; meshes, colors and faces are read-only inputs.
    - Every iteration renders the reference view against the input image and,
      depending on the guidance mode, a set of novel views scored by a depth
      backend or a score provider. The total loss is
      ``lambda_ref * L_ref + lambda_guidance * mean_views(L_guidance)``.
    - Per-view random streams come from ``(seed, iteration, view)``, so any
      iteration can be replayed from a checkpoint.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
import contextlib
from dataclasses import dataclass, field, replace
import json
import math
import pathlib
from typing import Any

import numpy as np
import torch

from combiverse.combiner.checkpoint import latest_checkpoint, load_checkpoint, save_checkpoint
from combiverse.combiner.config import OptimizerConfig
from combiverse.combiner.variables import PlacementVariables
from combiverse.diff_render.camera import reference_camera
from combiverse.diff_render.rasterizer import ComposedScene, RendererSettings, RenderOutput, render
from combiverse.diff_render.views import ViewSampler, dump_views, sample_novel_views
from combiverse.errors import BackendError, DivergenceError, ValidationError
from combiverse.guidance.config import GuidanceConfig
from combiverse.guidance.diffusion import ScoreProvider, score_distillation_loss, weighting
from combiverse.guidance.losses import depth_guidance_loss, reference_loss, resize_raster, target_from_image
from combiverse.scene_model.types import CameraSpec, ObjectRecord, PlacementParams, SceneInput
from combiverse.spatial_init.depth import DepthClient, DepthMap
from combiverse.utils_logger import log_metrics, logger, metrics_sink

GROWTH_FACTOR = 100.0
GROWTH_PATIENCE = 20
_GROWTH_FLOOR = 1e-6


@dataclass
class CombineRun:
    """Trajectory and loss history of one combination run.

    ``trajectory[k]`` holds the placements after iteration ``k``; the loss
    entries at ``k`` were measured before that step.
    """

    trajectory: list[list[PlacementParams]] = field(default_factory=list)
    losses: dict[str, list[float]] = field(
        default_factory=lambda: {"reference": [], "guidance": [], "total": []}
    )
    timesteps: list[list[int]] = field(default_factory=list)
    checkpoint_dir: pathlib.Path | None = None

    @property
    def iterations(self) -> int:
        return len(self.trajectory)

    @property
    def final(self) -> list[PlacementParams]:
        return self.trajectory[-1]

    def to_meta(self) -> dict[str, Any]:
        return {
            "trajectory": [[p.to_dict() for p in step] for step in self.trajectory],
            "losses": self.losses,
            "timesteps": self.timesteps,
        }

    def restore(self, meta: dict[str, Any]) -> None:
        self.trajectory = [[PlacementParams.from_dict(p) for p in step] for step in meta["trajectory"]]
        self.losses = {key: list(values) for key, values in meta["losses"].items()}
        self.timesteps = [list(ts) for ts in meta["timesteps"]]


@dataclass(frozen=True)
class _GuidanceContext:
    config: GuidanceConfig
    provider: ScoreProvider | None
    embedding: Any
    scaling: Any
    depth_client: DepthClient | None
    scene_depth: torch.Tensor | None
    object_mask: torch.Tensor | None
    seed: int


def _check_inputs(
    records: Sequence[ObjectRecord],
    init: Sequence[PlacementParams],
    guidance: GuidanceConfig,
    provider: ScoreProvider | None,
    depth_client: DepthClient | None,
    scene_depth: DepthMap | None,
) -> None:
    if not records:
        raise ValidationError("combine needs at least one object")
    if len(init) != len(records):
        raise ValidationError(f"{len(records)} objects but {len(init)} initial placements")
    missing = [r.index for r in records if r.mesh is None]
    if missing:
        raise ValidationError(f"objects {missing} have no mesh")
    if guidance.mode in ("sds", "ssds") and provider is None:
        raise ValidationError(f"guidance mode {guidance.mode!r} needs a score provider")
    if guidance.mode == "depth":
        if guidance.guidance_view == "novel" and depth_client is None:
            raise ValidationError("depth guidance on novel views needs a depth backend")
        if guidance.guidance_view == "reference" and scene_depth is None:
            raise ValidationError("depth guidance on the reference view needs the scene depth")


def _object_mask(records: Sequence[ObjectRecord], size: tuple[int, int]) -> torch.Tensor | None:
    masks = [r.mask for r in records if r.mask is not None]
    if not masks:
        return None
    union = torch.as_tensor(np.logical_or.reduce(masks).astype(np.float64))
    return resize_raster(union, size) > 0.5


def _guidance_term(
    out: RenderOutput, ctx: _GuidanceContext, iteration: int, view: int
) -> tuple[torch.Tensor, float, int | None] | None:
    """Surrogate loss, reported value and timestep for one view; ``None`` skips the view."""
    config = ctx.config
    if config.mode in ("sds", "ssds"):
        rng = np.random.default_rng([ctx.seed, iteration, view])
        x = out.rgb.permute(2, 0, 1)
        surrogate, step = score_distillation_loss(
            x,
            ctx.provider,
            ctx.embedding,
            ctx.provider.schedule,
            config.sampler(ctx.seed),
            weighting(config.weighting),
            ctx.scaling,
            rng,
        )
        return surrogate, step.loss, step.timestep

    size = (out.depth.shape[1], out.depth.shape[0])
    if config.guidance_view == "reference":
        predicted, mask = ctx.scene_depth, ctx.object_mask
    else:
        try:
            estimate = ctx.depth_client.depth(out.to_image())
        except Exception as e:
            raise BackendError("depth", str(e)) from e
        predicted = torch.as_tensor(np.array(estimate.values), dtype=out.depth.dtype)
        mask = out.alpha.detach() > 0.5
    predicted = resize_raster(predicted.to(out.depth.dtype), size)
    if mask is None or not bool(mask.any()):
        logger.warning(f"Iteration {iteration}: view {view} shows no foreground, skipping depth guidance")
        return None
    loss = depth_guidance_loss(out.depth, predicted, mask)
    return loss, float(loss.detach()), None


def combine(
    records: Sequence[ObjectRecord],
    init: Sequence[PlacementParams],
    scene: SceneInput,
    guidance: GuidanceConfig,
    optimizer: OptimizerConfig,
    renderer: RendererSettings | None = None,
    *,
    views: ViewSampler | None = None,
    provider: ScoreProvider | None = None,
    depth_client: DepthClient | None = None,
    scene_depth: DepthMap | None = None,
    pixel_to_scene: float | None = None,
    camera: CameraSpec | None = None,
    target: torch.Tensor | np.ndarray | None = None,
    run_dir: str | pathlib.Path | None = None,
    resume: bool = False,
    dump_every: int = 0,
    callback: Callable[[int, list[PlacementParams]], None] | None = None,
) -> tuple[list[PlacementParams], CombineRun]:
    """Optimize every object's placement under reference and guidance losses.

    Args:
        records: Objects with meshes, in scene order.
        init: Initial placements, one per record.
        scene: The input scene; its image is the reference-view target.
        guidance: Guidance mode and loss weights.
        optimizer: Learning rates, iterations, seed and trainable parameters.
        renderer: Rasterizer settings.
        views: Novel-view distribution; missing radius and center follow the reference depth.
        provider: Score provider for ``sds`` and ``ssds`` modes.
        depth_client: Depth backend for ``depth`` mode on novel views.
        scene_depth: Input-image depth for ``depth`` mode on the reference view.
        pixel_to_scene: Pixel-to-scene factor used by the initialization.
        camera: Reference camera override.
        target: Premultiplied ``(H, W, 4)`` target override.
        run_dir: Folder for checkpoints, metrics and view dumps.
        resume: Continue from the latest checkpoint in ``run_dir``.
        dump_every: Write novel-view PNGs every this many iterations (0 disables).
        callback: Called with ``(iteration, placements)`` after each step.

    Returns:
        tuple: Final placements and the run history.

    Raises:
        ValidationError: Inputs are inconsistent.
        BackendError: A guidance backend failed.
        DivergenceError: The loss became non-finite or kept growing.
    """
    _check_inputs(records, init, guidance, provider, depth_client, scene_depth)
    renderer = renderer or RendererSettings()
    meshes = [r.mesh for r in records]

    depth_ref = float(np.mean([p.translation[2] for p in init]))
    if camera is None:
        camera = reference_camera(
            scene.image_size,
            renderer.resolution,
            depth_ref,
            pixel_to_scene=pixel_to_scene,
            orthographic=renderer.orthographic,
        )
    size = (camera.width, camera.height)
    target_t = (
        target_from_image(scene.image, size)
        if target is None
        else torch.as_tensor(np.array(target) if isinstance(target, np.ndarray) else target, dtype=torch.float64)
    )

    views = views or ViewSampler()
    if views.radius is None or views.center is None:
        radius = views.radius if views.radius is not None else depth_ref
        views = replace(
            views,
            radius=radius,
            center=views.center if views.center is not None else (0.0, 0.0, depth_ref),
        )
    views = replace(views, seed=optimizer.seed)

    ctx = _GuidanceContext(
        config=guidance,
        provider=provider,
        embedding=provider.encode_prompt(scene.caption) if provider is not None else None,
        scaling=guidance.scaling(scene.spatial_token_indices),
        depth_client=depth_client,
        scene_depth=(
            torch.as_tensor(np.array(scene_depth.values)) if scene_depth is not None else None
        ),
        object_mask=_object_mask(records, size),
        seed=optimizer.seed,
    )

    variables = PlacementVariables(
        init, trainable=optimizer.trainable, fixed_objects=optimizer.fixed_objects
    )
    if not variables.trainable():
        raise ValidationError("no trainable placement parameter")
    adam = torch.optim.Adam(variables.param_groups(optimizer), eps=optimizer.eps)

    run = CombineRun()
    ckpt_dir = pathlib.Path(run_dir) / "combine" if run_dir is not None else None
    run.checkpoint_dir = ckpt_dir
    start = 0
    growth = 0
    if ckpt_dir is not None and not resume:
        for stale in ckpt_dir.glob("ckpt_*.npz"):
            stale.unlink()
    if resume and ckpt_dir is not None:
        found = latest_checkpoint(ckpt_dir)
        if found is not None:
            meta = load_checkpoint(found, variables, adam)
            run.restore(meta)
            start = int(meta["iteration"])
            growth = int(meta.get("growth", 0))
            logger.info(f"Resuming combination from {found.name} at iteration {start}")

    metrics_path = ckpt_dir / "metrics.jsonl" if ckpt_dir is not None else None
    if metrics_path is not None:
        _truncate_metrics(metrics_path, start)

    logger.info(
        f"Combining {len(records)} objects: mode={guidance.mode} view={guidance.guidance_view} "
        f"iterations={optimizer.iterations} render={size[0]}x{size[1]}"
    )
    baseline: float | None = run.losses["total"][0] if run.losses["total"] else None
    last_checkpoint: pathlib.Path | None = latest_checkpoint(ckpt_dir) if ckpt_dir is not None else None

    def checkpoint(iteration: int) -> pathlib.Path | None:
        if ckpt_dir is None:
            return None
        return save_checkpoint(
            ckpt_dir, iteration, variables, adam, {"seed": optimizer.seed, "growth": growth, **run.to_meta()}
        )

    # the starting state is the first good checkpoint
    if start == 0 and optimizer.checkpoint_every:
        last_checkpoint = checkpoint(0)

    with metrics_sink(metrics_path) if metrics_path is not None else contextlib.nullcontext():
        for iteration in range(start, optimizer.iterations):
            # Reference view
            adam.zero_grad(set_to_none=True)
            composed = ComposedScene.of(meshes, variables.placements())
            ref = render(composed, camera, renderer)
            l_ref = reference_loss(ref, target_t, guidance.lambda_rgb, guidance.lambda_alpha)
            surrogate = guidance.lambda_ref * l_ref

            # Guidance on the reference view or on fresh novel views
            values: list[float] = []
            timesteps: list[int] = []
            terms: list[torch.Tensor] = []
            renders: list[RenderOutput] = []
            if guidance.mode != "base":
                if guidance.guidance_view == "reference":
                    targets = [(0, ref)]
                else:
                    cameras = sample_novel_views(views, iteration, camera)
                    renders = [render(composed, cam, renderer) for cam in cameras]
                    targets = list(enumerate(renders))
                for view, out in targets:
                    result = _guidance_term(out, ctx, iteration, view)
                    # the mode has no term for this view
                    if result is None:
                        continue
                    term, value, t = result
                    terms.append(term)
                    values.append(value)
                    if t is not None:
                        timesteps.append(t)
            l_guidance = float(np.mean(values)) if values else 0.0
            if terms:
                surrogate = surrogate + guidance.lambda_guidance * torch.stack(terms).mean()

            # Divergence checks before any parameter moves
            reported_ref = float(l_ref.detach())
            total = guidance.lambda_ref * reported_ref + guidance.lambda_guidance * l_guidance
            if not math.isfinite(total):
                raise DivergenceError("loss is not finite", iteration, last_checkpoint)
            if baseline is None:
                baseline = total
            # consecutive iterations above the growth bound
            growth = growth + 1 if total > GROWTH_FACTOR * max(abs(baseline), _GROWTH_FLOOR) else 0
            if growth >= GROWTH_PATIENCE:
                raise DivergenceError(
                    f"loss above {GROWTH_FACTOR:g}x its initial value for {GROWTH_PATIENCE} iterations",
                    iteration,
                    last_checkpoint,
                )

            # Step
            surrogate.backward()
            for tensor in variables.trainable():
                if tensor.grad is not None and not bool(torch.isfinite(tensor.grad).all()):
                    raise DivergenceError(
                        "gradient is not finite", iteration, last_checkpoint
                    )
            adam.step()

            # Record and report
            params = variables.params()
            run.trajectory.append(params)
            run.losses["reference"].append(reported_ref)
            run.losses["guidance"].append(l_guidance)
            run.losses["total"].append(total)
            run.timesteps.append(timesteps)
            log_metrics(
                {
                    "iteration": iteration,
                    "loss_reference": reported_ref,
                    "loss_guidance": l_guidance,
                    "loss_total": total,
                    "lambda_ref": guidance.lambda_ref,
                    "lambda_guidance": guidance.lambda_guidance,
                    "timesteps": timesteps,
                    "placements": [p.to_dict() for p in params],
                }
            )
            message = (
                f"Iteration {iteration}: total={total:.6g} reference={reported_ref:.6g} "
                f"guidance={l_guidance:.6g}"
            )
            if iteration % 50 == 0:
                logger.info(message)
            else:
                logger.debug(message)

            # Artifacts
            if dump_every and run_dir is not None and iteration % dump_every == 0:
                dump_views(renders or [ref], run_dir, iteration)
            done = iteration + 1
            # the checkpoint holds the state after ``done`` steps
            if optimizer.checkpoint_every and done % optimizer.checkpoint_every == 0:
                last_checkpoint = checkpoint(done)
            if callback is not None:
                callback(iteration, params)

    final = variables.params()
    logger.info(f"Combination finished after {run.iterations} iterations")
    return final, run


def _truncate_metrics(path: pathlib.Path, start: int) -> None:
    """Drop records from ``start`` onward so a resumed run appends cleanly."""
    if not path.exists():
        return
    if start == 0:
        path.unlink()
        return
    kept = [
        line
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip() and _iteration_of(line) < start
    ]
    path.write_text("".join(line + "\n" for line in kept), encoding="utf-8")


def _iteration_of(line: str) -> int:
    return int(json.loads(line)["iteration"])


__all__ = ["GROWTH_FACTOR", "GROWTH_PATIENCE", "CombineRun", "combine"]
