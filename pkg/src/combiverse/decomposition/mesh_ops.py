"""Mesh simplification to a face budget."""

import numpy as np
import open3d as o3d
from scipy.spatial import cKDTree

from combiverse.errors import DecimationError, ValidationError
from combiverse.scene_model.mesh import TriangleMesh
from combiverse.utils_logger import logger

DEFAULT_FACE_BUDGET = 50_000
_MAX_PASSES = 4
# allowed bound drift per axis, as a fraction of that axis extent
BOUNDS_TOLERANCE = 0.05


def _to_open3d(mesh: TriangleMesh) -> o3d.geometry.TriangleMesh:
    o3d_mesh = o3d.geometry.TriangleMesh()
    o3d_mesh.vertices = o3d.utility.Vector3dVector(np.array(mesh.vertices))
    o3d_mesh.triangles = o3d.utility.Vector3iVector(np.array(mesh.faces, dtype=np.int32))
    o3d_mesh.vertex_colors = o3d.utility.Vector3dVector(np.array(mesh.vertex_colors))
    return o3d_mesh


def check_bounds(original: TriangleMesh, reduced: TriangleMesh, tolerance: float = BOUNDS_TOLERANCE) -> None:
    """Raise unless every bound of ``reduced`` is within ``tolerance`` of the original extent on its axis."""
    extent = original.extent
    drift = np.abs(reduced.bounds - original.bounds).max(axis=0)
    # flat axes fall back to the largest extent
    scale = np.where(extent > 0, extent, extent.max())
    if np.any(drift > tolerance * scale):
        raise DecimationError(
            f"decimation moved the mesh bounds {original.bounds.tolist()} -> {reduced.bounds.tolist()}"
        )


def decimate_mesh(mesh: TriangleMesh, target_faces: int = DEFAULT_FACE_BUDGET) -> TriangleMesh:
    """Reduce a mesh to at most ``target_faces`` triangles with quadric decimation.

    Meshes already within budget are returned unchanged. Vertex colors are
    carried by the decimator; when it drops them they are transferred from
    the nearest original vertex.

    Raises:
        ValidationError: ``target_faces`` is below 4.
        DecimationError: The simplified mesh is empty or its bounds drifted
            more than 5% on some axis.
    """
    if target_faces < 4:
        raise ValidationError(f"target_faces must be >= 4, got {target_faces}")
    if mesh.face_count <= target_faces:
        return mesh

    source = _to_open3d(mesh)
    simplified = source
    budget = target_faces
    for _ in range(_MAX_PASSES):
        simplified = source.simplify_quadric_decimation(target_number_of_triangles=budget)
        simplified.remove_degenerate_triangles()
        simplified.remove_unreferenced_vertices()
        if len(simplified.triangles) <= target_faces:
            break
        budget = max(4, int(budget * 0.9))

    vertices = np.asarray(simplified.vertices, dtype=np.float64)
    faces = np.asarray(simplified.triangles, dtype=np.int64)
    if len(faces) == 0 or len(vertices) < 3:
        raise DecimationError(f"decimation to {target_faces} faces produced an empty mesh")
    if len(faces) > target_faces:
        raise DecimationError(f"decimation stopped at {len(faces)} faces, budget is {target_faces}")

    if simplified.has_vertex_colors() and len(simplified.vertex_colors) == len(vertices):
        colors = np.asarray(simplified.vertex_colors, dtype=np.float64)
    else:
        _, nearest = cKDTree(mesh.vertices).query(vertices)
        colors = mesh.vertex_colors[nearest]

    result = TriangleMesh(vertices, faces, colors)
    check_bounds(mesh, result)
    logger.debug(f"Decimated mesh {mesh.face_count} -> {result.face_count} faces")
    return result


__all__ = ["BOUNDS_TOLERANCE", "DEFAULT_FACE_BUDGET", "check_bounds", "decimate_mesh"]
