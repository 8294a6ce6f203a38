"""Baking placements into meshes and writing the composition."""

from __future__ import annotations

from collections.abc import Sequence
import pathlib

import numpy as np
import torch
import trimesh

from combiverse.diff_render.transforms import apply_transform
from combiverse.errors import ExportError, ValidationError
from combiverse.scene_model.mesh import TriangleMesh
from combiverse.scene_model.types import ObjectRecord, PlacementParams
from combiverse.utils_logger import logger

GLB_NAME = "composition.glb"
OBJ_NAME = "composition.obj"


def bake_placement(mesh: TriangleMesh, params: PlacementParams) -> TriangleMesh:
    """Mesh with ``params`` applied to its vertices; faces and colors unchanged."""
    with torch.no_grad():
        vertices = apply_transform(mesh, params).numpy()
    return TriangleMesh(vertices, np.array(mesh.faces), np.array(mesh.vertex_colors))


def compose(records: Sequence[ObjectRecord], params: Sequence[PlacementParams]) -> list[TriangleMesh]:
    if len(records) != len(params):
        raise ValidationError(f"{len(records)} objects but {len(params)} placements")
    baked = []
    for record, p in zip(records, params, strict=True):
        if record.mesh is None:
            raise ValidationError(f"object {record.index} has no mesh")
        baked.append(bake_placement(record.mesh, p))
    return baked


def export_composition(
    records: Sequence[ObjectRecord],
    params: Sequence[PlacementParams],
    out_dir: str | pathlib.Path,
) -> dict[str, pathlib.Path]:
    """Write ``composition.glb`` (one node per object) and ``composition.obj``.

    Raises:
        ExportError: A file could not be written.
    """
    baked = compose(records, params)
    folder = pathlib.Path(out_dir)
    scene = trimesh.Scene()
    for record, mesh in zip(records, baked, strict=True):
        name = f"object_{record.index}"
        scene.add_geometry(mesh.to_trimesh(), node_name=name, geom_name=name)
    merged = trimesh.util.concatenate([m.to_trimesh() for m in baked])
    try:
        folder.mkdir(parents=True, exist_ok=True)
        glb = folder / GLB_NAME
        glb.write_bytes(scene.export(file_type="glb"))
        obj = folder / OBJ_NAME
        merged.export(obj, file_type="obj", include_normals=False)
    except OSError as e:
        raise ExportError(f"could not write composition to {folder}: {e}") from e
    logger.info(f"Exported composition of {len(baked)} objects to {glb}")
    return {"glb": glb, "obj": obj}


def load_composition(path: str | pathlib.Path) -> list[TriangleMesh]:
    """Meshes of an exported glTF composition, ordered by object index."""
    path = pathlib.Path(path)
    if not path.exists():
        raise ValidationError(f"composition file not found: {path}")
    loaded = trimesh.load(path, force="scene", process=False)
    names = sorted(loaded.geometry, key=lambda n: int(n.rsplit("_", 1)[-1]))
    return [TriangleMesh.from_trimesh(loaded.geometry[name]) for name in names]


__all__ = ["GLB_NAME", "OBJ_NAME", "bake_placement", "compose", "export_composition", "load_composition"]
