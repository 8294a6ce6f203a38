import os
import pathlib

import numpy as np
import pytest
import yaml

from combiverse.combiner import load_composition
from combiverse.combiner.export import bake_placement
from combiverse.errors import ConfigurationError, RunLockedError, ValidationError
from combiverse.guidance import SyntheticScoreProvider, SyntheticSpec
from combiverse.main import main
from combiverse.pipeline_cli import (
    cmd_decompose,
    cmd_reconstruct,
    cmd_run_all,
    load_records,
)
from combiverse.pipeline_cli.config import (
    RUN_DIR_ENV,
    default_config_document,
    load_run_config,
    parse_run_config,
    save_run_config,
)
from combiverse.pipeline_cli.examples import TOY_TARGET, write_example
from combiverse.pipeline_cli.manifest import RunManifest, run_lock
from combiverse.pipeline_cli import stages
from combiverse.pipeline_cli.stages import RASTERS, object_dir, read_placements
from combiverse.scene_model import load_obj, load_scene
from combiverse.scene_model.raster import read_rgb


def edit_config(path: pathlib.Path, **sections) -> pathlib.Path:
    """Merge ``sections`` into the YAML config at ``path``."""
    document = yaml.safe_load(path.read_text(encoding="utf-8"))
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(document.get(key), dict):
            document[key].update(value)
        else:
            document[key] = value
    return save_run_config(document, path)


@pytest.fixture
def two_cubes_config(tmp_path) -> pathlib.Path:
    paths = write_example("two-cubes", tmp_path / "example")
    return edit_config(paths["config"], optimizer={"iterations": 30})


# -------------------------------------------------------------------
# Configuration
# -------------------------------------------------------------------


def test_default_configuration_values(tmp_path):
    config = parse_run_config(default_config_document(), base_dir=tmp_path)
    assert config.scene == tmp_path / "scene.yaml"
    assert config.run_dir == tmp_path / "run"
    assert config.decomposition.face_budget == 50000
    assert config.decomposition.prompt == "a complete 3D model"
    assert config.decomposition.guidance_scale == 7.5
    assert config.guidance.multiplier == 25.0
    assert config.guidance.timesteps == (800, 900)
    assert (config.optimizer.lr_translation_z, config.optimizer.lr_default) == (0.01, 0.001)
    assert config.optimizer.iterations == 500
    assert config.views.count == 10
    assert config.views.elevation == (-10.0, 45.0)
    assert parse_run_config(config.to_document(), base_dir=tmp_path) == config


@pytest.mark.parametrize(
    ("edit", "field"),
    [
        ({"bogus": 1}, "config.bogus"),
        ({"guidance": {"timesteps": [900, 800]}}, "guidance.timesteps"),
        ({"optimizer": {"seed": 3}}, "optimizer.seed"),
        ({"backends": {"depth": {"kind": "remote"}}}, "backends.depth.kind"),
        ({"decomposition": {"face_budget": 2}}, "decomposition.face_budget"),
    ],
)
def test_config_errors_name_the_field(tmp_path, edit, field):
    document = {**default_config_document(), **edit}
    with pytest.raises(ConfigurationError) as info:
        parse_run_config(document, base_dir=tmp_path)
    assert info.value.field == field
    assert info.value.exit_code == 2


def test_run_dir_falls_back_to_environment(tmp_path, monkeypatch):
    document = default_config_document()
    document.pop("run_dir")
    monkeypatch.setenv(RUN_DIR_ENV, str(tmp_path / "from-env"))
    assert parse_run_config(document, base_dir=tmp_path).run_dir == tmp_path / "from-env"
    monkeypatch.delenv(RUN_DIR_ENV)
    with pytest.raises(ConfigurationError) as info:
        parse_run_config(document, base_dir=tmp_path)
    assert info.value.field == "run_dir"


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_run_config(tmp_path / "nope.yaml")


# -------------------------------------------------------------------
# Stages
# -------------------------------------------------------------------


def test_decompose_writes_artifacts_and_skips_when_current(two_cubes_config, tmp_path):
    config = load_run_config(two_cubes_config, run_dir=tmp_path / "run")
    records = cmd_decompose(config)
    assert len(records) == 2
    for index in range(2):
        for name in RASTERS:
            assert (object_dir(config.run_dir, index) / f"{name}.png").exists()
    assert (config.run_dir / "depth.bin").exists()
    assert RunManifest.load(config.run_dir).is_complete("decompose")

    assert cmd_decompose(config) is None

    mask = object_dir(config.run_dir, 1) / "mask.png"
    mask.write_bytes(mask.read_bytes() + b"\0")
    assert cmd_decompose(config) is not None


def test_reconstruct_needs_decompose(two_cubes_config, tmp_path):
    config = load_run_config(two_cubes_config, run_dir=tmp_path / "run")
    with pytest.raises(ValidationError):
        cmd_reconstruct(config)


def test_reconstruct_respects_face_budget(two_cubes_config, tmp_path):
    edit_config(
        two_cubes_config,
        backends={"reconstructor": {"kind": "mock", "options": {"type": "icosphere"}}},
        decomposition={"face_budget": 1000},
    )
    config = load_run_config(two_cubes_config, run_dir=tmp_path / "run")
    cmd_decompose(config)
    records = cmd_reconstruct(config)
    assert all(r.mesh.face_count <= 1000 for r in records)
    assert load_obj(object_dir(config.run_dir, 0) / "mesh.obj").face_count <= 1000


def test_seed_changes_background_noise(two_cubes_config, tmp_path):
    first = load_run_config(two_cubes_config, run_dir=tmp_path / "a", seed=0)
    second = load_run_config(two_cubes_config, run_dir=tmp_path / "b", seed=1)
    cmd_decompose(first)
    cmd_decompose(second)
    noised_a = read_rgb(object_dir(first.run_dir, 0) / "noised.png")
    noised_b = read_rgb(object_dir(second.run_dir, 0) / "noised.png")
    assert not np.array_equal(noised_a, noised_b)
    scene = load_scene(first.scene)
    masks = [load_records(c.run_dir, scene)[0].mask for c in (first, second)]
    assert np.array_equal(*masks)


def test_run_all_resumes_after_decompose(two_cubes_config, tmp_path):
    config = load_run_config(two_cubes_config, run_dir=tmp_path / "run")
    cmd_decompose(config)
    folder = object_dir(config.run_dir, 0)
    before = {p.name: p.stat().st_mtime_ns for p in folder.glob("*.png")}
    final = cmd_run_all(config)
    assert len(final) == 2
    assert {p.name: p.stat().st_mtime_ns for p in folder.glob("*.png")} == before
    assert (config.run_dir / "export" / "composition.glb").exists()
    assert cmd_run_all(config) == final


def test_run_lock_is_exclusive(tmp_path):
    with run_lock(tmp_path):
        with pytest.raises(RunLockedError):
            with run_lock(tmp_path):
                pass
    assert not (tmp_path / ".lock").exists()


def test_stale_lock_is_taken_over(tmp_path):
    (tmp_path / ".lock").write_text("999999999", encoding="utf-8")
    with run_lock(tmp_path) as lock:
        assert lock.read_text(encoding="utf-8") == str(os.getpid())


# -------------------------------------------------------------------
# Command line
# -------------------------------------------------------------------


def test_cli_runs_are_reproducible(tmp_path):
    example = tmp_path / "example"
    assert main(["example", "two-cubes", "--out", str(example)]) == 0
    config = edit_config(example / "config.yaml", optimizer={"iterations": 30})

    runs = [tmp_path / "a", tmp_path / "b"]
    for run_dir in runs:
        assert main(["run-all", "--config", str(config), "--run-dir", str(run_dir)]) == 0

    manifests = [RunManifest.load(run_dir).data["stages"] for run_dir in runs]
    for stage in ("decompose", "reconstruct", "combine"):
        assert manifests[0][stage]["artifacts"] == manifests[1][stage]["artifacts"]

    run_dir = runs[0]
    final = read_placements(run_dir / "combine" / "final.json")
    exported = load_composition(run_dir / "export" / "composition.glb")
    for index, (mesh, params) in enumerate(zip(exported, final, strict=True)):
        expected = bake_placement(load_obj(object_dir(run_dir, index) / "mesh.obj"), params)
        assert np.allclose(mesh.vertices, expected.vertices, atol=1e-6)


def test_cli_missing_config_exits_with_validation_code(tmp_path):
    assert main(["decompose", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_cli_unreachable_backend_exits_with_backend_code(two_cubes_config, tmp_path):
    edit_config(
        two_cubes_config,
        backends={"segmenter": {"kind": "external", "endpoint": "http://127.0.0.1:9", "timeout_s": 1.0}},
        decomposition={"retry_attempts": 1},
    )
    code = main(["decompose", "--config", str(two_cubes_config), "--run-dir", str(tmp_path / "run")])
    assert code == 3
    stage = RunManifest.load(tmp_path / "run").stage("decompose")
    assert stage["complete"] is False
    assert "BackendError" in stage["error"]


class _RenormalizingProvider(SyntheticScoreProvider):
    def introspect_attention(self, embedding, scaling=None):
        maps = super().introspect_attention(embedding, scaling)
        return [m / m.sum(axis=-1, keepdims=True) for m in maps]


def test_cli_rejects_non_conforming_external_provider(two_cubes_config, tmp_path, monkeypatch):
    edit_config(
        two_cubes_config,
        backends={"score_provider": {"kind": "external", "endpoint": "http://127.0.0.1:9"}},
        guidance={"mode": "ssds", "guidance_view": "reference"},
    )
    monkeypatch.setattr(
        stages,
        "build_score_provider",
        lambda config, caption, initial=None: _RenormalizingProvider(SyntheticSpec(caption=caption)),
    )
    code = main(["run-all", "--config", str(two_cubes_config), "--run-dir", str(tmp_path / "run")])
    assert code == 2
    stage = RunManifest.load(tmp_path / "run").stage("combine")
    assert stage["complete"] is False
    assert "ConformanceError" in stage["error"]


def test_cli_rejects_unknown_mode(two_cubes_config):
    with pytest.raises(SystemExit):
        main(["ablate", "--config", str(two_cubes_config), "--modes", "bogus"])


def test_cli_init_writes_loadable_config(tmp_path):
    out = tmp_path / "combiverse.yaml"
    assert main(["init", "--out", str(out)]) == 0
    config = load_run_config(out)
    assert config.scene == tmp_path / "scene.yaml"
    assert config.run_dir == tmp_path / "run"


@pytest.mark.slow
def test_toy_example_places_squirrel(tmp_path):
    example = tmp_path / "toy"
    assert main(["example", "toy", "--out", str(example)]) == 0
    run_dir = tmp_path / "run"
    assert main(["run-all", "--config", str(example / "config.yaml"), "--run-dir", str(run_dir)]) == 0
    squirrel = read_placements(run_dir / "combine" / "final.json")[1]
    x, y, _ = squirrel.translation
    assert np.hypot(x - TOY_TARGET[0], y - TOY_TARGET[1]) < 0.05
