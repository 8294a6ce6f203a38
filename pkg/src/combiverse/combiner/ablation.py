"""Side-by-side comparison of guidance settings.

Each mode name is a guidance preset (``base``, ``depth``, ``sds``,
``ssds-low``, ``ssds-uniform``, ``ssds-full``). Every mode runs with the
same seeds; the report collects final losses, an optional task-specific
error, loss trajectories and a grid of final reference renders.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
import pathlib

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

from combiverse.combiner.config import OptimizerConfig
from combiverse.combiner.optimize import combine
from combiverse.diff_render.camera import reference_camera
from combiverse.diff_render.rasterizer import ComposedScene, RendererSettings, render
from combiverse.errors import ValidationError
from combiverse.guidance.config import PRESETS, GuidanceConfig, guidance_preset
from combiverse.scene_model.types import CameraSpec, ObjectRecord, PlacementParams, SceneInput
from combiverse.utils_logger import logger

Evaluate = Callable[[list[PlacementParams]], float]


@dataclass
class AblationReport:
    table: pd.DataFrame
    trajectories: pd.DataFrame
    finals: dict[tuple[str, int], list[PlacementParams]] = field(default_factory=dict)
    paths: dict[str, pathlib.Path] = field(default_factory=dict)


def ablation_matrix(
    scene: SceneInput,
    records: Sequence[ObjectRecord],
    modes: Sequence[str],
    *,
    init: Sequence[PlacementParams],
    optimizer: OptimizerConfig,
    guidance: GuidanceConfig | None = None,
    renderer: RendererSettings | None = None,
    seeds: Sequence[int] | None = None,
    evaluate: Evaluate | None = None,
    out_dir: str | pathlib.Path | None = None,
    camera: CameraSpec | None = None,
    pixel_to_scene: float | None = None,
    **combine_kwargs,
) -> AblationReport:
    """Run :func:`combine` once per (mode, seed) and collect the results.

    Args:
        modes: Guidance preset names.
        guidance: Settings the presets are applied on top of.
        seeds: Optimizer seeds; defaults to ``optimizer.seed``.
        evaluate: Maps final placements to a task error, reported as ``target_error``.
        out_dir: When given, writes ``ablation.csv``, ``trajectories.png`` and ``grid.png``.
        **combine_kwargs: Forwarded to :func:`combine` (provider, depth backend, views, target).

    Raises:
        ValidationError: An unknown mode or an empty mode list.
    """
    if not modes:
        raise ValidationError("ablation needs at least one mode")
    unknown = [m for m in modes if m not in PRESETS]
    if unknown:
        raise ValidationError(f"unknown ablation modes {unknown}; choose from {sorted(PRESETS)}")
    renderer = renderer or RendererSettings()
    seeds = list(seeds) if seeds is not None else [optimizer.seed]

    rows, curves = [], []
    finals: dict[tuple[str, int], list[PlacementParams]] = {}
    for mode in modes:
        config = guidance_preset(mode, guidance)
        for seed in seeds:
            logger.info(f"Ablation run: mode={mode} seed={seed}")
            final, run = combine(
                records,
                init,
                scene,
                config,
                replace(optimizer, seed=seed, checkpoint_every=0),
                renderer,
                camera=camera,
                pixel_to_scene=pixel_to_scene,
                **combine_kwargs,
            )
            finals[(mode, seed)] = final
            row = {
                "mode": mode,
                "seed": seed,
                "iterations": run.iterations,
                "loss_reference": run.losses["reference"][-1],
                "loss_guidance": run.losses["guidance"][-1],
                "loss_total": run.losses["total"][-1],
            }
            if evaluate is not None:
                row["target_error"] = float(evaluate(final))
            rows.append(row)
            curves.append(
                pd.DataFrame(
                    {
                        "mode": mode,
                        "seed": seed,
                        "iteration": np.arange(run.iterations),
                        "loss_total": run.losses["total"],
                    }
                )
            )

    report = AblationReport(
        table=pd.DataFrame(rows), trajectories=pd.concat(curves, ignore_index=True), finals=finals
    )
    if out_dir is not None:
        if camera is None:
            depth_ref = float(np.mean([p.translation[2] for p in init]))
            camera = reference_camera(
                scene.image_size,
                renderer.resolution,
                depth_ref,
                pixel_to_scene=pixel_to_scene,
                orthographic=renderer.orthographic,
            )
        report.paths = write_ablation_outputs(report, records, modes, seeds[0], camera, renderer, out_dir)
    return report


def write_ablation_outputs(
    report: AblationReport,
    records: Sequence[ObjectRecord],
    modes: Sequence[str],
    seed: int,
    camera: CameraSpec,
    renderer: RendererSettings,
    out_dir: str | pathlib.Path,
) -> dict[str, pathlib.Path]:
    folder = pathlib.Path(out_dir)
    folder.mkdir(parents=True, exist_ok=True)

    csv_path = folder / "ablation.csv"
    report.table.to_csv(csv_path, index=False)

    plt.figure(figsize=(8, 5))
    sns.lineplot(data=report.trajectories, x="iteration", y="loss_total", hue="mode")
    plt.yscale("symlog")
    plt.title("Total loss by guidance mode")
    plt.tight_layout()
    trajectory_path = folder / "trajectories.png"
    plt.savefig(trajectory_path)
    plt.close()

    meshes = [r.mesh for r in records]
    fig, axes = plt.subplots(1, len(modes), figsize=(3 * len(modes), 3), squeeze=False)
    for ax, mode in zip(axes[0], modes, strict=True):
        out = render(ComposedScene.of(meshes, report.finals[(mode, seed)]), camera, renderer)
        ax.imshow(out.to_image())
        ax.set_title(mode)
        ax.axis("off")
    fig.tight_layout()
    grid_path = folder / "grid.png"
    fig.savefig(grid_path)
    plt.close(fig)

    logger.info(f"Ablation report written to {csv_path}")
    return {"csv": csv_path, "trajectories": trajectory_path, "grid": grid_path}


__all__ = ["AblationReport", "Evaluate", "ablation_matrix", "write_ablation_outputs"]
