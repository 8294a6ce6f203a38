import json

import numpy as np
import pytest
import torch

from combiverse.combiner import (
    OptimizerConfig,
    PlacementVariables,
    ablation_matrix,
    combine,
    export_composition,
    latest_checkpoint,
    load_composition,
)
from combiverse.combiner.export import bake_placement
from combiverse.diff_render import ComposedScene, render
from combiverse.errors import ConfigurationError, DivergenceError, ValidationError
from combiverse.guidance import GuidanceConfig, SyntheticScoreProvider, SyntheticSpec
from combiverse.pipeline_cli.examples import (
    TOY_INITS,
    TWO_CUBES_TRUTH,
    perturbed,
    toy_benchmark,
    two_cubes_scene,
)
from combiverse.scene_model.mesh import unit_cube
from combiverse.scene_model.types import PlacementParams
from combiverse.utils_logger import read_metrics

from conftest import cube_records

BASE = GuidanceConfig(mode="base")
DELTA = ((-0.05, 0.04), (0.05, -0.04))
DELTA_XYZ = ((-0.05, 0.04, 0.07), (0.05, -0.04, -0.06))


def exact_target(records, placements, camera, renderer) -> torch.Tensor:
    """Float render at ``placements`` through the same variables the optimizer builds."""
    variables = PlacementVariables(placements)
    meshes = [r.mesh for r in records]
    return render(ComposedScene.of(meshes, variables.placements()), camera, renderer).rgba.detach()


class _NanProvider(SyntheticScoreProvider):
    def predict_noise(self, noisy, embedding, timestep, scaling=None, *, hint=None):
        return torch.full_like(noisy, float("nan"))


class _LateNanProvider(SyntheticScoreProvider):
    """Well-behaved for ``good_calls`` predictions, non-finite afterwards."""

    def __init__(self, spec, good_calls: int) -> None:
        super().__init__(spec)
        self.good_calls = good_calls
        self.calls = 0

    def predict_noise(self, noisy, embedding, timestep, scaling=None, *, hint=None):
        self.calls += 1
        if self.calls > self.good_calls:
            return torch.full_like(noisy, float("nan"))
        return super().predict_noise(noisy, embedding, timestep, scaling, hint=hint)


# -------------------------------------------------------------------
# Variables and settings
# -------------------------------------------------------------------


def test_depth_translation_gets_its_own_rate():
    variables = PlacementVariables(TWO_CUBES_TRUTH)
    groups = {g["name"]: g for g in variables.param_groups(OptimizerConfig())}
    assert groups["translation_z"]["lr"] / groups["default"]["lr"] == pytest.approx(10.0)
    assert len(groups["translation_z"]["params"]) == 2


def test_variables_round_trip_placements():
    init = [PlacementParams(scale=0.4, rotation=(0.1, 0.0, -0.2), translation=(0.3, -0.1, 2.5))]
    params = PlacementVariables(init).params()[0]
    assert params.scale == pytest.approx(0.4)
    assert params.rotation == pytest.approx((0.1, 0.0, -0.2))
    assert params.translation == pytest.approx((0.3, -0.1, 2.5))


def test_fixed_objects_and_groups_freeze_leaves():
    variables = PlacementVariables(TWO_CUBES_TRUTH, trainable=("translation_xy",), fixed_objects=(0,))
    assert len(variables.trainable()) == 1
    with pytest.raises(ValidationError):
        PlacementVariables(TWO_CUBES_TRUTH, fixed_objects=(2,))


def test_optimizer_config_names_bad_field():
    with pytest.raises(ConfigurationError) as info:
        OptimizerConfig.from_dict({"trainable": ["shear"]})
    assert info.value.field == "optimizer.trainable"
    with pytest.raises(ConfigurationError):
        OptimizerConfig(iterations=0)


# -------------------------------------------------------------------
# Combination loop
# -------------------------------------------------------------------


def test_ground_truth_is_stationary():
    scene, records, camera, renderer = two_cubes_scene()
    target = exact_target(records, TWO_CUBES_TRUTH, camera, renderer)
    final, run = combine(
        records, TWO_CUBES_TRUTH, scene, BASE, OptimizerConfig(iterations=50, checkpoint_every=0), renderer,
        camera=camera, target=target,
    )
    for got, truth in zip(final, TWO_CUBES_TRUTH, strict=True):
        assert np.allclose(got.translation, truth.translation, atol=1e-4)
        assert got.scale == pytest.approx(truth.scale, abs=1e-4)
    assert run.iterations == 50


@pytest.mark.slow
def test_recovers_perturbed_cubes():
    scene, records, camera, renderer = two_cubes_scene()
    vertices = [r.mesh.vertices.copy() for r in records]
    target = exact_target(records, TWO_CUBES_TRUTH, camera, renderer)
    optimizer = OptimizerConfig(
        lr_default=0.0005,
        lr_translation_z=0.005,
        iterations=400,
        trainable=("translation_xy", "translation_z"),
        checkpoint_every=0,
    )
    final, _ = combine(
        records, perturbed(TWO_CUBES_TRUTH, DELTA_XYZ), scene, BASE, optimizer, renderer,
        camera=camera, target=target,
    )
    baked = np.concatenate(
        [bake_placement(r.mesh, p).vertices for r, p in zip(records, TWO_CUBES_TRUTH, strict=True)]
    )
    tolerance = 0.02 * float(np.ptp(baked, axis=0).max())
    for got, truth in zip(final, TWO_CUBES_TRUTH, strict=True):
        assert np.all(np.abs(np.subtract(got.translation, truth.translation)) < tolerance)
    # only placements move
    assert all(np.array_equal(r.mesh.vertices, v) for r, v in zip(records, vertices, strict=True))


def test_loss_accounting_and_metrics(tmp_path):
    scene, records, camera, renderer = two_cubes_scene()
    guidance = GuidanceConfig(mode="base", lambda_ref=2.0)
    _, run = combine(
        records, perturbed(TWO_CUBES_TRUTH, DELTA), scene, guidance,
        OptimizerConfig(iterations=4, checkpoint_every=0), renderer, camera=camera, run_dir=tmp_path,
    )
    assert run.losses["guidance"] == [0.0] * 4
    assert run.losses["total"] == pytest.approx([2.0 * v for v in run.losses["reference"]])
    records_ = read_metrics(tmp_path / "combine" / "metrics.jsonl")
    assert [r["iteration"] for r in records_] == [0, 1, 2, 3]
    assert records_[0]["loss_total"] == pytest.approx(run.losses["total"][0])


def test_resume_matches_uninterrupted_run(tmp_path):
    scene, records, camera, renderer = two_cubes_scene()
    init = perturbed(TWO_CUBES_TRUTH, DELTA)
    optimizer = OptimizerConfig(iterations=10, checkpoint_every=5)
    _, full = combine(records, init, scene, BASE, optimizer, renderer, camera=camera, run_dir=tmp_path)

    ckpt_dir = tmp_path / "combine"
    assert latest_checkpoint(ckpt_dir).name == "ckpt_00010.npz"
    (ckpt_dir / "ckpt_00010.npz").unlink()
    _, resumed = combine(
        records, init, scene, BASE, optimizer, renderer, camera=camera, run_dir=tmp_path, resume=True
    )
    assert resumed.trajectory == full.trajectory
    assert resumed.losses == full.losses
    assert len(read_metrics(ckpt_dir / "metrics.jsonl")) == 10


def test_non_finite_guidance_diverges(tmp_path):
    scene, records, camera, renderer = two_cubes_scene()
    provider = _NanProvider(SyntheticSpec(caption=scene.caption))
    with pytest.raises(DivergenceError) as info:
        combine(
            records, TWO_CUBES_TRUTH, scene, GuidanceConfig(mode="sds", guidance_view="reference"),
            OptimizerConfig(iterations=5), renderer, camera=camera, provider=provider, run_dir=tmp_path,
        )
    assert info.value.iteration == 0
    assert info.value.exit_code == 4
    # nothing ran yet, so the only good state is the starting one
    assert info.value.checkpoint == tmp_path / "combine" / "ckpt_00000.npz"
    assert info.value.checkpoint.exists()


def test_divergence_reports_last_good_checkpoint(tmp_path):
    scene, records, camera, renderer = two_cubes_scene()
    provider = _LateNanProvider(SyntheticSpec(caption=scene.caption), good_calls=3)
    with pytest.raises(DivergenceError) as info:
        combine(
            records, TWO_CUBES_TRUTH, scene, GuidanceConfig(mode="sds", guidance_view="reference"),
            OptimizerConfig(iterations=6, checkpoint_every=2), renderer, camera=camera,
            provider=provider, run_dir=tmp_path,
        )
    assert info.value.iteration == 3
    assert info.value.checkpoint.name == "ckpt_00002.npz"
    assert not (tmp_path / "combine" / "ckpt_00003.npz").exists()
    with np.load(info.value.checkpoint) as archive:
        meta = json.loads(str(archive["meta"]))
        assert all(np.isfinite(archive[key]).all() for key in archive.files if key.startswith("var/"))
    assert meta["iteration"] < info.value.iteration


def test_combine_rejects_inconsistent_inputs():
    scene, records, camera, renderer = two_cubes_scene()
    with pytest.raises(ValidationError):
        combine(records, TWO_CUBES_TRUTH[:1], scene, BASE, OptimizerConfig(iterations=1), renderer, camera=camera)
    with pytest.raises(ValidationError):
        combine(records, TWO_CUBES_TRUTH, scene, GuidanceConfig(mode="sds"), OptimizerConfig(iterations=1), renderer)


# -------------------------------------------------------------------
# Export
# -------------------------------------------------------------------


def test_bake_identity_keeps_vertices():
    cube = unit_cube()
    assert np.allclose(bake_placement(cube, PlacementParams()).vertices, cube.vertices)


def test_export_places_each_object(tmp_path):
    records = cube_records(2)
    params = [PlacementParams(translation=(-1.0, 0.0, 0.0)), PlacementParams(translation=(1.0, 0.0, 0.0))]
    paths = export_composition(records, params, tmp_path / "export")
    assert paths["glb"].exists() and paths["obj"].exists()

    meshes = load_composition(paths["glb"])
    assert len(meshes) == 2
    lows = np.min([m.bounds[0] for m in meshes], axis=0)
    highs = np.max([m.bounds[1] for m in meshes], axis=0)
    assert lows[0] == pytest.approx(-1.5, abs=1e-6)
    assert highs[0] == pytest.approx(1.5, abs=1e-6)
    for mesh, record, p in zip(meshes, records, params, strict=True):
        assert np.allclose(mesh.vertices, bake_placement(record.mesh, p).vertices, atol=1e-6)
        assert mesh.face_count == record.mesh.face_count


def test_export_needs_one_placement_per_object(tmp_path):
    with pytest.raises(ValidationError):
        export_composition(cube_records(2), [PlacementParams()], tmp_path)


# -------------------------------------------------------------------
# Ablation
# -------------------------------------------------------------------


def test_ablation_writes_report(tmp_path):
    scene, records, camera, renderer = two_cubes_scene()
    report = ablation_matrix(
        scene, records, ["base"], init=perturbed(TWO_CUBES_TRUTH, DELTA),
        optimizer=OptimizerConfig(iterations=3), renderer=renderer, seeds=[0, 1],
        camera=camera, out_dir=tmp_path,
    )
    assert len(report.table) == 2
    assert set(report.paths) == {"csv", "trajectories", "grid"}
    assert all(p.exists() for p in report.paths.values())
    # base mode draws nothing at random
    first, second = report.table.to_dict("records")
    assert first["loss_total"] == second["loss_total"]
    assert report.finals[("base", 0)] == report.finals[("base", 1)]


def test_ablation_rejects_unknown_mode():
    scene, records, camera, renderer = two_cubes_scene()
    with pytest.raises(ValidationError):
        ablation_matrix(scene, records, ["ssds-mid"], init=TWO_CUBES_TRUTH, optimizer=OptimizerConfig())


# -------------------------------------------------------------------
# Toy benchmark
# -------------------------------------------------------------------


def run_toy(bench, seed: int = 0):
    final, _ = combine(
        bench.records, bench.init, bench.scene, bench.guidance, bench.optimizer, bench.renderer,
        camera=bench.camera, provider=bench.provider(seed),
    )
    return final


@pytest.mark.slow
@pytest.mark.parametrize("init_xy", TOY_INITS)
def test_spatial_guidance_places_squirrel(init_xy):
    bench = toy_benchmark(init_xy, mode="ssds-full")
    final = run_toy(bench)
    assert bench.evaluate(final) < 0.05
    assert final[0].translation == pytest.approx(bench.init[0].translation)


@pytest.mark.slow
def test_plain_guidance_leaves_squirrel_in_place():
    bench = toy_benchmark(TOY_INITS[0], mode="sds")
    assert bench.displacement(run_toy(bench)) < 0.01


@pytest.mark.slow
def test_high_noise_range_beats_other_ranges():
    bench = toy_benchmark(TOY_INITS[0])
    report = ablation_matrix(
        bench.scene, bench.records, ["ssds-full", "ssds-uniform", "ssds-low"],
        init=bench.init, optimizer=bench.optimizer, guidance=bench.guidance, renderer=bench.renderer,
        seeds=range(5), evaluate=bench.evaluate, camera=bench.camera, provider=bench.provider(),
    )
    errors = report.table.pivot(index="seed", columns="mode", values="target_error")
    wins = ((errors["ssds-full"] < errors["ssds-uniform"]) & (errors["ssds-full"] < errors["ssds-low"])).sum()
    assert wins >= 3
