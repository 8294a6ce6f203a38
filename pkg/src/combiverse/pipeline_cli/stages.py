"""Pipeline stages: decompose, reconstruct, combine, plus run-all and ablate.

Run directory layout::

    manifest.json
    depth.bin
    objects/<i>/{mask,cutout,noised,inpaint_mask,completed}.png
    objects/<i>/mesh.obj
    combine/{init,final}.json, combine/metrics.jsonl, combine/ckpt_<iter>.npz
    export/composition.{glb,obj}
    ablation/{ablation.csv,trajectories.png,grid.png}

A stage is skipped when the manifest shows it completed with the same
configuration and unchanged artifacts, unless ``force`` is set.
"""

from __future__ import annotations

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
import json
import pathlib
from typing import Any

import numpy as np

from combiverse.combiner.ablation import AblationReport, ablation_matrix
from combiverse.combiner.export import export_composition
from combiverse.combiner.optimize import CombineRun, combine
from combiverse.decomposition.decompose import decompose_object, reconstruct_object
from combiverse.decomposition.mesh_ops import decimate_mesh
from combiverse.diff_render.camera import reference_camera
from combiverse.diff_render.rasterizer import ComposedScene, render
from combiverse.errors import CombiverseError, ValidationError
from combiverse.guidance.conformance import provider_conformance_check
from combiverse.guidance.diffusion import ScoreProvider
from combiverse.pipeline_cli.backends import (
    build_depth,
    build_inpainter,
    build_reconstructor,
    build_score_provider,
    build_segmenter,
    needs_initial_render,
)
from combiverse.pipeline_cli.config import RunConfig
from combiverse.pipeline_cli.manifest import RunManifest, atomic_write_text, file_digest, fingerprint, run_lock
from combiverse.scene_model.mesh import load_obj, save_obj
from combiverse.scene_model.raster import read_mask, read_rgb, read_rgba, write_png
from combiverse.scene_model.scene_io import load_scene
from combiverse.scene_model.types import ObjectRecord, PlacementParams, SceneInput
from combiverse.spatial_init.depth import load_depth, save_depth
from combiverse.spatial_init.initialization import initialize_placements
from combiverse.utils_logger import logger

RASTERS = ("mask", "cutout", "noised", "inpaint_mask", "completed")


# -------------------------------------------------------------------
# Fingerprints and record persistence
# -------------------------------------------------------------------


def _decompose_fingerprint(config: RunConfig) -> str:
    return fingerprint(
        {
            "scene": file_digest(config.scene),
            "image": file_digest(load_scene(config.scene).image_path),
            "seed": config.seed,
            "backends": {k: asdict(config.backend(k)) for k in ("segmenter", "inpainter", "depth")},
            "decomposition": asdict(config.decomposition),
        }
    )


def _reconstruct_fingerprint(config: RunConfig) -> str:
    return fingerprint(
        {
            "upstream": _decompose_fingerprint(config),
            "reconstructor": asdict(config.backend("reconstructor")),
            "face_budget": config.decomposition.face_budget,
        }
    )


def _combine_fingerprint(config: RunConfig) -> str:
    document = config.to_document()
    return fingerprint(
        {
            "upstream": _reconstruct_fingerprint(config),
            "seed": config.seed,
            "dump_every": config.dump_every,
            "score_provider": document["backends"]["score_provider"],
            "depth": document["backends"]["depth"],
            "spatial_init": document["spatial_init"],
            "guidance": document["guidance"],
            "optimizer": document["optimizer"],
            "renderer": document["renderer"],
        }
    )


def object_dir(run_dir: pathlib.Path, index: int) -> pathlib.Path:
    return run_dir / "objects" / str(index)


def write_record(run_dir: pathlib.Path, record: ObjectRecord) -> list[pathlib.Path]:
    folder = object_dir(run_dir, record.index)
    return [write_png(folder / f"{name}.png", getattr(record, name)) for name in RASTERS]


def load_records(run_dir: pathlib.Path, scene: SceneInput, *, with_mesh: bool = False) -> list[ObjectRecord]:
    """Rebuild object records from the run directory."""
    records = []
    for index, spec in enumerate(scene.objects):
        folder = object_dir(run_dir, index)
        missing = [n for n in RASTERS if not (folder / f"{n}.png").exists()]
        if missing:
            raise ValidationError(f"object {index}: missing artifacts {missing}; run decompose first")
        mesh = None
        if with_mesh:
            if not (folder / "mesh.obj").exists():
                raise ValidationError(f"object {index}: mesh.obj missing; run reconstruct first")
            mesh = load_obj(folder / "mesh.obj")
        records.append(
            ObjectRecord(
                index=index,
                spec=spec,
                image_size=scene.image_size,
                mask=read_mask(folder / "mask.png"),
                cutout=read_rgba(folder / "cutout.png"),
                noised=read_rgb(folder / "noised.png"),
                inpaint_mask=read_mask(folder / "inpaint_mask.png"),
                completed=read_rgb(folder / "completed.png"),
                mesh=mesh,
            )
        )
    return records


def _write_placements(path: pathlib.Path, params: Sequence[PlacementParams]) -> pathlib.Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, json.dumps([p.to_dict() for p in params], indent=2) + "\n")
    return path


def read_placements(path: str | pathlib.Path) -> list[PlacementParams]:
    data = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
    return [PlacementParams.from_dict(entry) for entry in data]


def _run_stage(manifest: RunManifest, name: str, action):
    logger.info(f"STARTING stage {name}")
    try:
        result = action()
    except CombiverseError as e:
        manifest.mark_failed(name, e)
        logger.error(f"Stage {name} failed: {e}")
        raise
    logger.info(f"FINISHED stage {name}")
    return result


# -------------------------------------------------------------------
# Stages
# -------------------------------------------------------------------


def cmd_decompose(config: RunConfig, *, force: bool = False) -> list[ObjectRecord] | None:
    """Segment, noise, mask and inpaint every object; estimate scene depth.

    Returns the records, or ``None`` when the stage was already current.
    """
    with run_lock(config.run_dir):
        return _decompose(config, force)


def _decompose(config: RunConfig, force: bool) -> list[ObjectRecord] | None:
    manifest = RunManifest.load(config.run_dir)
    manifest.set_config(config.to_document())
    stage_fp = _decompose_fingerprint(config)
    if not force and manifest.is_current("decompose", stage_fp):
        logger.info("Stage decompose is up to date, skipping")
        return None

    def action() -> list[ObjectRecord]:
        scene = load_scene(config.scene)
        segmenter = build_segmenter(config)
        inpainter = build_inpainter(config)
        depth_client = build_depth(config)
        settings = config.decomposition

        def one(index: int) -> ObjectRecord:
            return decompose_object(
                scene,
                index,
                segmenter,
                inpainter,
                seed=config.seed,
                prompt=settings.prompt,
                retry=settings.retry,
            )

        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(one, range(len(scene.objects))))
        artifacts: list[pathlib.Path] = []
        for record in records:
            artifacts.extend(write_record(config.run_dir, record))
        depth = depth_client.depth(scene.image)
        if depth.shape != (scene.image_size[1], scene.image_size[0]):
            raise ValidationError(f"depth backend returned {depth.shape} for a {scene.image_size} image")
        artifacts.append(save_depth(depth, config.run_dir / "depth.bin"))
        manifest.mark_complete("decompose", artifacts, stage_fp)
        manifest.invalidate_after("decompose")
        return records

    return _run_stage(manifest, "decompose", action)


def cmd_reconstruct(config: RunConfig, *, force: bool = False) -> list[ObjectRecord] | None:
    """Lift every completed object image to a decimated, normalized mesh."""
    with run_lock(config.run_dir):
        return _reconstruct(config, force)


def _reconstruct(config: RunConfig, force: bool) -> list[ObjectRecord] | None:
    manifest = RunManifest.load(config.run_dir)
    if not manifest.is_complete("decompose"):
        raise ValidationError("stage decompose has not completed; run it first")
    stage_fp = _reconstruct_fingerprint(config)
    if not force and manifest.is_current("reconstruct", stage_fp):
        logger.info("Stage reconstruct is up to date, skipping")
        return None

    def action() -> list[ObjectRecord]:
        scene = load_scene(config.scene)
        records = load_records(config.run_dir, scene)
        client = build_reconstructor(config)
        budget = config.decomposition.face_budget

        def one(record: ObjectRecord) -> ObjectRecord:
            mesh = reconstruct_object(
                record.completed, client, index=record.index, retry=config.decomposition.retry
            )
            mesh = decimate_mesh(mesh, budget)
            logger.info(f"Object {record.index}: mesh with {mesh.face_count} faces")
            return record.with_updates(mesh=mesh)

        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(one, records))
        artifacts = [
            save_obj(r.mesh, object_dir(config.run_dir, r.index) / "mesh.obj") for r in records
        ]
        manifest.mark_complete("reconstruct", artifacts, stage_fp)
        manifest.invalidate_after("reconstruct")
        return records

    return _run_stage(manifest, "reconstruct", action)


def _check_provider(provider: ScoreProvider, scene: SceneInput, config: RunConfig) -> None:
    """External providers must honor the attention contract before any optimization."""
    indices = config.guidance.token_indices or scene.spatial_token_indices or (0,)
    report = provider_conformance_check(
        provider,
        caption=scene.caption,
        token_indices=tuple(indices),
        multiplier=config.guidance.multiplier,
    )
    logger.info(
        f"Score provider conformance passed: {report.sites} sites, "
        f"row error {report.row_error:.2e}, scale error {report.scale_error:.2e}, drift {report.drift:.2e}"
    )


def _prepare_combination(config: RunConfig) -> dict[str, Any]:
    """Scene, records with meshes, depth, initial placements and guidance backends."""
    scene = load_scene(config.scene)
    records = load_records(config.run_dir, scene, with_mesh=True)
    depth = load_depth(config.run_dir / "depth.bin")
    init = initialize_placements(records, depth, pixel_to_scene=config.spatial_init.pixel_to_scene)
    depth_ref = float(np.mean([p.translation[2] for p in init]))
    camera = reference_camera(
        scene.image_size,
        config.renderer.resolution,
        depth_ref,
        pixel_to_scene=config.spatial_init.pixel_to_scene,
        orthographic=config.renderer.orthographic,
    )
    provider = None
    if config.guidance.mode in ("sds", "ssds"):
        initial = None
        if needs_initial_render(config):
            out = render(ComposedScene.of([r.mesh for r in records], init), camera, config.renderer)
            initial = out.rgb.detach().permute(2, 0, 1).numpy()
        provider = build_score_provider(config, scene.caption, initial)
        if config.backend("score_provider").kind == "external":
            _check_provider(provider, scene, config)
    depth_client = None
    if config.guidance.mode == "depth" and config.guidance.guidance_view == "novel":
        depth_client = build_depth(config)
    return {
        "scene": scene,
        "records": records,
        "depth": depth,
        "init": init,
        "camera": camera,
        "provider": provider,
        "depth_client": depth_client,
    }


def cmd_combine(
    config: RunConfig, *, force: bool = False
) -> tuple[list[PlacementParams], CombineRun] | None:
    """Initialize placements, optimize them and export the composition."""
    with run_lock(config.run_dir):
        return _combine(config, force)


def _combine(config: RunConfig, force: bool) -> tuple[list[PlacementParams], CombineRun] | None:
    manifest = RunManifest.load(config.run_dir)
    if not manifest.is_complete("reconstruct"):
        raise ValidationError("stage reconstruct has not completed; run it first")
    stage_fp = _combine_fingerprint(config)
    if not force and manifest.is_current("combine", stage_fp):
        logger.info("Stage combine is up to date, skipping")
        return None
    previous = manifest.stage("combine")
    resume = not force and previous.get("fingerprint") == stage_fp

    def action() -> tuple[list[PlacementParams], CombineRun]:
        inputs = _prepare_combination(config)
        combine_dir = config.run_dir / "combine"
        init_path = _write_placements(combine_dir / "init.json", inputs["init"])
        final, run = combine(
            inputs["records"],
            inputs["init"],
            inputs["scene"],
            config.guidance,
            config.optimizer,
            config.renderer,
            views=config.views,
            provider=inputs["provider"],
            depth_client=inputs["depth_client"],
            scene_depth=inputs["depth"],
            pixel_to_scene=config.spatial_init.pixel_to_scene,
            camera=inputs["camera"],
            run_dir=config.run_dir,
            resume=resume,
            dump_every=config.dump_every,
        )
        final_path = _write_placements(combine_dir / "final.json", final)
        exported = export_composition(inputs["records"], final, config.run_dir / "export")
        artifacts = [init_path, final_path, combine_dir / "metrics.jsonl", *exported.values()]
        manifest.mark_complete("combine", artifacts, stage_fp)
        return final, run

    # Record the fingerprint up front so an interrupted run can resume its checkpoints.
    manifest.data["stages"]["combine"] = {"complete": False, "fingerprint": stage_fp}
    manifest.save()
    return _run_stage(manifest, "combine", action)


def cmd_run_all(config: RunConfig, *, force: bool = False) -> list[PlacementParams]:
    """Run every stage in order, skipping the ones already current."""
    with run_lock(config.run_dir):
        _decompose(config, force)
        _reconstruct(config, force)
        result = _combine(config, force)
    if result is not None:
        return result[0]
    return read_placements(config.run_dir / "combine" / "final.json")


def cmd_ablate(
    config: RunConfig, modes: Sequence[str], *, seeds: Sequence[int] | None = None
) -> AblationReport:
    """Run the combination once per guidance preset and write the comparison."""
    with run_lock(config.run_dir):
        manifest = RunManifest.load(config.run_dir)
        if not manifest.is_complete("reconstruct"):
            raise ValidationError("stage reconstruct has not completed; run it first")
        logger.info(f"STARTING ablation over {', '.join(modes)}")
        needs_provider = any(m not in ("base", "depth") for m in modes)
        needs_depth = "depth" in modes and config.guidance.guidance_view == "novel"
        check_config = config
        if needs_provider and config.guidance.mode not in ("sds", "ssds"):
            check_config = replace(config, guidance=replace(config.guidance, mode="ssds"))
        inputs = _prepare_combination(check_config)
        report = ablation_matrix(
            inputs["scene"],
            inputs["records"],
            modes,
            init=inputs["init"],
            optimizer=config.optimizer,
            guidance=config.guidance,
            renderer=config.renderer,
            seeds=seeds,
            out_dir=config.run_dir / "ablation",
            camera=inputs["camera"],
            pixel_to_scene=config.spatial_init.pixel_to_scene,
            views=config.views,
            provider=inputs["provider"] if needs_provider else None,
            depth_client=build_depth(config) if needs_depth else None,
            scene_depth=inputs["depth"],
        )
        logger.info("FINISHED ablation")
        return report


__all__ = [
    "RASTERS",
    "cmd_ablate",
    "cmd_combine",
    "cmd_decompose",
    "cmd_reconstruct",
    "cmd_run_all",
    "load_records",
    "object_dir",
    "read_placements",
    "write_record",
]
