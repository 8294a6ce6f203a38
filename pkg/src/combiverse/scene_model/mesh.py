"""Vertex-colored triangle meshes and their OBJ file form."""

from __future__ import annotations

from dataclasses import dataclass
import io
import pathlib

import numpy as np
import trimesh

from combiverse.errors import MeshValidationError

DEFAULT_COLOR = (0.5, 0.5, 0.5)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Immutable triangle mesh with per-vertex RGB colors in [0, 1]."""

    vertices: np.ndarray
    faces: np.ndarray
    vertex_colors: np.ndarray

    def __post_init__(self) -> None:
        vertices = np.asarray(self.vertices, dtype=np.float64)
        faces = np.asarray(self.faces)
        colors = np.asarray(self.vertex_colors, dtype=np.float64)
        if vertices.ndim != 2 or vertices.shape[1] != 3 or len(vertices) == 0:
            raise MeshValidationError(f"vertices must be a non-empty (N, 3) array, got {vertices.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3 or len(faces) == 0:
            raise MeshValidationError(f"faces must be a non-empty (F, 3) array, got {faces.shape}")
        if not np.issubdtype(faces.dtype, np.integer):
            raise MeshValidationError("face indices must be integers")
        if faces.min() < 0 or faces.max() >= len(vertices):
            raise MeshValidationError("face index out of range")
        if not np.all(np.isfinite(vertices)):
            raise MeshValidationError("vertices must be finite")
        if colors.shape != vertices.shape:
            raise MeshValidationError(
                f"vertex_colors must match vertices {vertices.shape}, got {colors.shape}"
            )
        for name, array in (
            ("vertices", vertices),
            ("faces", faces.astype(np.int64)),
            ("vertex_colors", np.clip(colors, 0.0, 1.0)),
        ):
            array = np.ascontiguousarray(array)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @classmethod
    def uniform(cls, vertices: np.ndarray, faces: np.ndarray, color=DEFAULT_COLOR) -> TriangleMesh:
        vertices = np.asarray(vertices, dtype=np.float64)
        colors = np.tile(np.asarray(color, dtype=np.float64), (len(vertices), 1))
        return cls(vertices, faces, colors)

    @property
    def face_count(self) -> int:
        return len(self.faces)

    @property
    def bounds(self) -> np.ndarray:
        """``[[min_x, min_y, min_z], [max_x, max_y, max_z]]``."""
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @property
    def extent(self) -> np.ndarray:
        low, high = self.bounds
        return high - low

    def is_normalized(self, tol: float = 1e-9) -> bool:
        low, high = self.bounds
        return bool(np.all(self.extent <= 1.0 + tol) and np.allclose((low + high) / 2, 0, atol=1e-9))

    def normalized(self) -> TriangleMesh:
        """Center the bounding box at the origin and scale the longest side to 1."""
        low, high = self.bounds
        longest = float(np.max(high - low))
        if longest <= 0:
            raise MeshValidationError("mesh has zero extent")
        vertices = (self.vertices - (low + high) / 2.0) / longest
        return TriangleMesh(vertices, self.faces, self.vertex_colors)

    # ---------------------------------------------------------------
    # trimesh bridge
    # ---------------------------------------------------------------

    def to_trimesh(self) -> trimesh.Trimesh:
        colors = np.round(self.vertex_colors * 255.0).astype(np.uint8)
        alpha = np.full((len(colors), 1), 255, dtype=np.uint8)
        return trimesh.Trimesh(
            vertices=np.array(self.vertices),
            faces=np.array(self.faces),
            vertex_colors=np.hstack([colors, alpha]),
            process=False,
        )

    @classmethod
    def from_trimesh(cls, mesh: trimesh.Trimesh) -> TriangleMesh:
        vertices = np.asarray(mesh.vertices, dtype=np.float64)
        colors = None
        visual = getattr(mesh, "visual", None)
        if visual is not None and getattr(visual, "kind", None) == "vertex":
            raw = np.asarray(visual.vertex_colors)
            if raw.shape[0] == len(vertices):
                colors = raw[:, :3].astype(np.float64) / 255.0
        elif visual is not None and getattr(visual, "kind", None) == "texture":
            raw = np.asarray(visual.to_color().vertex_colors)
            if raw.shape[0] == len(vertices):
                colors = raw[:, :3].astype(np.float64) / 255.0
        if colors is None:
            colors = np.tile(np.asarray(DEFAULT_COLOR), (len(vertices), 1))
        return cls(vertices, np.asarray(mesh.faces, dtype=np.int64), colors)


def load_obj(path: str | pathlib.Path) -> TriangleMesh:
    """Read an OBJ file, keeping vertex order and per-vertex colors."""
    path = pathlib.Path(path)
    try:
        loaded = trimesh.load(path, file_type="obj", force="mesh", process=False, maintain_order=True)
    except Exception as e:
        raise MeshValidationError(f"cannot read mesh {path}: {e}") from e
    if not isinstance(loaded, trimesh.Trimesh) or len(loaded.faces) == 0:
        raise MeshValidationError(f"{path} does not contain a triangle mesh")
    return TriangleMesh.from_trimesh(loaded)


def save_obj(mesh: TriangleMesh, path: str | pathlib.Path) -> pathlib.Path:
    """Write a mesh as OBJ with vertex colors."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mesh.to_trimesh().export(path, file_type="obj", include_normals=False)
    return path


def obj_bytes(mesh: TriangleMesh) -> bytes:
    data = trimesh.exchange.obj.export_obj(mesh.to_trimesh(), include_normals=False)
    return data.encode("utf-8")


def mesh_from_obj_bytes(data: bytes) -> TriangleMesh:
    loaded = trimesh.load(
        io.BytesIO(data), file_type="obj", force="mesh", process=False, maintain_order=True
    )
    if not isinstance(loaded, trimesh.Trimesh) or len(loaded.faces) == 0:
        raise MeshValidationError("payload does not contain a triangle mesh")
    return TriangleMesh.from_trimesh(loaded)


# -------------------------------------------------------------------
# Primitive builders used by mock reconstructors and examples
# -------------------------------------------------------------------


def unit_cube(color=DEFAULT_COLOR) -> TriangleMesh:
    """Axis-aligned cube of side 1 centered at the origin (12 triangles, outward winding)."""
    v = np.array(
        [
            [-0.5, -0.5, -0.5],
            [0.5, -0.5, -0.5],
            [0.5, 0.5, -0.5],
            [-0.5, 0.5, -0.5],
            [-0.5, -0.5, 0.5],
            [0.5, -0.5, 0.5],
            [0.5, 0.5, 0.5],
            [-0.5, 0.5, 0.5],
        ]
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # back (-z)
            [4, 5, 6], [4, 6, 7],  # front (+z)
            [0, 1, 5], [0, 5, 4],  # bottom (-y)
            [3, 7, 6], [3, 6, 2],  # top (+y)
            [0, 4, 7], [0, 7, 3],  # left (-x)
            [1, 2, 6], [1, 6, 5],  # right (+x)
        ]
    )  # fmt: skip
    return TriangleMesh.uniform(v, f, color)


def unit_quad(color=DEFAULT_COLOR) -> TriangleMesh:
    """Square of side 1 in the z=0 plane centered at the origin (2 triangles)."""
    v = np.array([[-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.5, 0.5, 0.0], [-0.5, 0.5, 0.0]])
    f = np.array([[0, 1, 2], [0, 2, 3]])
    return TriangleMesh.uniform(v, f, color)


def icosphere(subdivisions: int = 3, color=DEFAULT_COLOR) -> TriangleMesh:
    """Icosphere of diameter 1 with ``20 * 4**subdivisions`` faces."""
    sphere = trimesh.creation.icosphere(subdivisions=subdivisions, radius=0.5)
    return TriangleMesh.uniform(np.asarray(sphere.vertices), np.asarray(sphere.faces), color)


__all__ = [
    "DEFAULT_COLOR",
    "TriangleMesh",
    "icosphere",
    "load_obj",
    "mesh_from_obj_bytes",
    "obj_bytes",
    "save_obj",
    "unit_cube",
    "unit_quad",
]
