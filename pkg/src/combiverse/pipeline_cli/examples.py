"""Bundled example scenes.

Module Information:
    - Filename: examples.py
    - Module: pipeline_cli.examples
    - Location: src/combiverse/pipeline_cli/

Key Concepts:
    - Toy scene: "a squirrel is sitting on a box". Two flat sprites under an
      orthographic camera; the box (blue) is fixed and the squirrel (red)
      may only slide in the image plane. The synthetic provider ties a
      content term to the noun and a spatial term to "sitting", so scaling
      the attention of the spatial token is what moves the squirrel onto the
      box.
    - Two cubes: two colored cubes side by side with known placements, for
      checking that reference-view optimization recovers perturbed ones.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, replace
import json
import pathlib
from typing import Any

import numpy as np

from combiverse.combiner.config import OptimizerConfig
from combiverse.diff_render.camera import reference_camera
from combiverse.diff_render.rasterizer import ComposedScene, RendererSettings, render
from combiverse.guidance.config import GuidanceConfig, guidance_preset
from combiverse.guidance.synthetic import SyntheticScoreProvider, synthetic_score_provider
from combiverse.pipeline_cli.backends import INITIAL_RENDER
from combiverse.pipeline_cli.config import default_config_document, save_run_config
from combiverse.scene_model.mesh import TriangleMesh, unit_cube, unit_quad
from combiverse.scene_model.scene_io import save_scene
from combiverse.scene_model.types import CameraSpec, ObjectRecord, ObjectSpec, PlacementParams, SceneInput
from combiverse.utils_logger import logger

EXAMPLES = ("toy", "two-cubes")

# -------------------------------------------------------------------
# Toy sprite scene
# -------------------------------------------------------------------

TOY_CAPTION = "a squirrel is sitting on a box"
TOY_SPATIAL_TOKENS = (3, 4)
TOY_SIZE = 64
TOY_BOX = PlacementParams(scale=0.3, translation=(0.0, -0.175, 2.0))
TOY_SPRITE_SCALE = 0.15
TOY_SPRITE_DEPTH = 1.9
TOY_TARGET = (0.0, 0.05)
TOY_INITS = ((-0.3, 0.3), (0.3, -0.3))
TOY_BOX_COLOR = (0.0, 0.0, 1.0)
TOY_SPRITE_COLOR = (1.0, 0.0, 0.0)


def toy_provider_options(anchor: Any = INITIAL_RENDER) -> dict[str, Any]:
    """Synthetic provider options for the toy scene.

    The anchor term keeps the squirrel's content where it started and fades
    once the sprite leaves its initial footprint. The centroid term pulls
    the red sprite to sit on the blue box, is tied to "sitting" and only
    acts at high noise levels. Estimates below ``noise_cutoff`` carry extra
    jitter.
    """
    offset = TOY_TARGET[1] - TOY_BOX.translation[1]
    return {
        "caption": TOY_CAPTION,
        "terms": [
            {"token": 1, "kind": "anchor", "weight": 1.0, "anchor": anchor},
            {
                "token": 3,
                "kind": "centroid",
                "weight": 300.0,
                "channel": 0,
                "reference_channel": 2,
                "offset": [0.0, offset],
                "ramp": [400, 800],
            },
        ],
        "noise_floor": 0.5,
        "noise_cutoff": 600,
    }


def _object_bbox(alpha: np.ndarray) -> ObjectSpec:
    rows, cols = np.nonzero(alpha > 0.5)
    return ObjectSpec((int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1))


def _records_from_render(
    meshes: Sequence[TriangleMesh],
    placements: Sequence[PlacementParams],
    camera: CameraSpec,
    renderer: RendererSettings,
) -> tuple[np.ndarray, list[ObjectRecord]]:
    """Scene image plus one record per object (mask, cutout and mesh)."""
    image = render(ComposedScene.of(meshes, placements), camera, renderer).to_image()
    size = (camera.width, camera.height)
    records = []
    for index, (mesh, params) in enumerate(zip(meshes, placements, strict=True)):
        alone = render(ComposedScene.of([mesh], [params]), camera, renderer)
        spec = _object_bbox(alone.alpha.detach().numpy())
        mask = (image[..., 3] > 127) & spec.indicator(size)
        cutout = np.where(mask[..., None], image, 0).astype(np.uint8)
        records.append(
            ObjectRecord(index=index, spec=spec, image_size=size, mask=mask, cutout=cutout, mesh=mesh)
        )
    return image, records


@dataclass
class ToyBenchmark:
    """Everything needed to run the toy scene through :func:`combine`."""

    scene: SceneInput
    records: list[ObjectRecord]
    init: list[PlacementParams]
    guidance: GuidanceConfig
    optimizer: OptimizerConfig
    renderer: RendererSettings
    camera: CameraSpec

    def initial_render(self) -> np.ndarray:
        """Channel-first ``(3, H, W)`` render of the initial placements."""
        out = render(ComposedScene.of([r.mesh for r in self.records], self.init), self.camera, self.renderer)
        return out.rgb.detach().permute(2, 0, 1).numpy()

    def provider(self, seed: int = 0) -> SyntheticScoreProvider:
        return synthetic_score_provider({**toy_provider_options(self.initial_render()), "seed": seed})

    def evaluate(self, final: Sequence[PlacementParams]) -> float:
        """Distance of the squirrel from its target, as a fraction of the image width."""
        x, y, _ = final[1].translation
        return float(np.hypot(x - TOY_TARGET[0], y - TOY_TARGET[1]))

    def displacement(self, final: Sequence[PlacementParams]) -> float:
        """How far the squirrel moved, as a fraction of the image width."""
        start, end = np.asarray(self.init[1].translation), np.asarray(final[1].translation)
        return float(np.linalg.norm(end[:2] - start[:2]))


def toy_benchmark(
    init_xy: tuple[float, float] = TOY_INITS[0],
    *,
    mode: str = "ssds-full",
    iterations: int = 300,
    seed: int = 0,
) -> ToyBenchmark:
    """Toy sprite scene with the squirrel starting at ``init_xy``.

    One scene unit spans the image width, so placement errors read directly
    as fractions of it.

    Args:
        init_xy: Initial squirrel center in scene units.
        mode: Guidance preset name.
        iterations: Optimizer steps.
        seed: Optimizer seed.
    """
    renderer = RendererSettings(resolution=TOY_SIZE, orthographic=True)
    camera = reference_camera((TOY_SIZE, TOY_SIZE), TOY_SIZE, TOY_BOX.translation[2], orthographic=True)
    meshes = [unit_quad(TOY_BOX_COLOR), unit_quad(TOY_SPRITE_COLOR)]
    init = [TOY_BOX, PlacementParams(scale=TOY_SPRITE_SCALE, translation=(*init_xy, TOY_SPRITE_DEPTH))]
    image, records = _records_from_render(meshes, init, camera, renderer)
    scene = SceneInput(
        image=image,
        objects=tuple(r.spec for r in records),
        caption=TOY_CAPTION,
        spatial_token_indices=TOY_SPATIAL_TOKENS,
    )
    guidance = guidance_preset(mode, GuidanceConfig(lambda_ref=0.0, guidance_view="reference"))
    optimizer = OptimizerConfig(
        lr_default=0.005,
        iterations=iterations,
        seed=seed,
        trainable=("translation_xy",),
        fixed_objects=(0,),
        checkpoint_every=0,
    )
    return ToyBenchmark(scene, records, init, guidance, optimizer, renderer, camera)


def write_toy_example(out_dir: str | pathlib.Path) -> dict[str, pathlib.Path]:
    """Write the toy scene and a run config that drives it through the mock pipeline."""
    out = pathlib.Path(out_dir)
    bench = toy_benchmark()
    scene_path = save_scene(bench.scene, out / "scene.yaml")
    document = default_config_document()
    document["backends"]["segmenter"]["options"] = {"type": "alpha"}
    document["backends"]["reconstructor"]["options"] = {"type": "cube"}
    document["backends"]["depth"]["options"] = {"near": TOY_BOX.translation[2]}
    options = toy_provider_options()
    options.pop("caption")
    document["backends"]["score_provider"]["options"] = options
    document["guidance"].update(
        {"mode": "ssds", "lambda_ref": 0.0, "guidance_view": "reference", "timesteps": [800, 900]}
    )
    document["optimizer"].update(
        {
            "lr_default": bench.optimizer.lr_default,
            "iterations": bench.optimizer.iterations,
            "trainable": ["translation_xy"],
            "fixed_objects": [0],
        }
    )
    document["renderer"].update({"resolution": TOY_SIZE, "orthographic": True})
    config_path = save_run_config(document, out / "config.yaml")
    logger.info(f"Wrote toy example to {out}")
    return {"scene": scene_path, "image": out / "scene.png", "config": config_path}


# -------------------------------------------------------------------
# Two cubes
# -------------------------------------------------------------------

TWO_CUBES_SIZE = 64
TWO_CUBES_TRUTH = (
    PlacementParams(scale=0.3, translation=(-0.2, 0.0, 2.0)),
    PlacementParams(scale=0.3, translation=(0.2, 0.0, 2.0)),
)
TWO_CUBES_COLORS = ((0.9, 0.2, 0.2), (0.2, 0.4, 0.9))
TWO_CUBES_CAPTION = "a red cube next to a blue cube"


def two_cubes_scene(
    placements: Sequence[PlacementParams] = TWO_CUBES_TRUTH,
) -> tuple[SceneInput, list[ObjectRecord], CameraSpec, RendererSettings]:
    """Two cubes rendered by the reference camera at their ground-truth placements."""
    renderer = RendererSettings(resolution=TWO_CUBES_SIZE)
    depth_ref = float(np.mean([p.translation[2] for p in placements]))
    camera = reference_camera((TWO_CUBES_SIZE, TWO_CUBES_SIZE), TWO_CUBES_SIZE, depth_ref)
    meshes = [unit_cube(color) for color in TWO_CUBES_COLORS]
    image, records = _records_from_render(meshes, placements, camera, renderer)
    scene = SceneInput(
        image=image,
        objects=tuple(r.spec for r in records),
        caption=TWO_CUBES_CAPTION,
        spatial_token_indices=(3, 4),
    )
    return scene, records, camera, renderer


def perturbed(placements: Sequence[PlacementParams], delta: Sequence[Sequence[float]]) -> list[PlacementParams]:
    """Shift each placement's translation by ``delta``, given as ``(dx, dy)`` or ``(dx, dy, dz)``."""
    shifted = []
    for p, d in zip(placements, delta, strict=True):
        step = (*d, 0.0) if len(d) == 2 else tuple(d)
        shifted.append(replace(p, translation=tuple(t + s for t, s in zip(p.translation, step, strict=True))))
    return shifted


def write_two_cubes_example(out_dir: str | pathlib.Path) -> dict[str, pathlib.Path]:
    """Write the two-cubes scene, its ground truth and a base-mode run config."""
    out = pathlib.Path(out_dir)
    scene, _, _, _ = two_cubes_scene()
    scene_path = save_scene(scene, out / "scene.yaml")
    truth_path = out / "ground_truth.json"
    truth_path.write_text(
        json.dumps([p.to_dict() for p in TWO_CUBES_TRUTH], indent=2) + "\n", encoding="utf-8"
    )
    document = default_config_document()
    document["backends"]["segmenter"]["options"] = {"type": "alpha"}
    document["backends"]["reconstructor"]["options"] = {"type": "cube"}
    document["backends"]["depth"]["options"] = {"near": TWO_CUBES_TRUTH[0].translation[2]}
    document["guidance"].update({"mode": "base"})
    document["optimizer"].update({"iterations": 150})
    document["renderer"].update({"resolution": TWO_CUBES_SIZE})
    config_path = save_run_config(document, out / "config.yaml")
    logger.info(f"Wrote two-cubes example to {out}")
    return {"scene": scene_path, "image": out / "scene.png", "config": config_path, "truth": truth_path}


def write_example(name: str, out_dir: str | pathlib.Path) -> dict[str, pathlib.Path]:
    if name == "toy":
        return write_toy_example(out_dir)
    if name == "two-cubes":
        return write_two_cubes_example(out_dir)
    raise ValueError(f"unknown example {name!r}; choose from {EXAMPLES}")


__all__ = [
    "EXAMPLES",
    "TOY_CAPTION",
    "TOY_INITS",
    "TOY_SPATIAL_TOKENS",
    "TOY_TARGET",
    "TWO_CUBES_TRUTH",
    "ToyBenchmark",
    "perturbed",
    "toy_benchmark",
    "toy_provider_options",
    "two_cubes_scene",
    "write_example",
    "write_toy_example",
    "write_two_cubes_example",
]
