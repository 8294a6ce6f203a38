from combiverse.scene_model.mesh import TriangleMesh, load_obj, save_obj
from combiverse.scene_model.scene_io import load_scene, save_scene
from combiverse.scene_model.tokenizer import tokenize_caption
from combiverse.scene_model.types import (
    CameraSpec,
    ObjectRecord,
    ObjectSpec,
    PlacementParams,
    SceneInput,
)

__all__ = [
    "CameraSpec",
    "ObjectRecord",
    "ObjectSpec",
    "PlacementParams",
    "SceneInput",
    "TriangleMesh",
    "load_obj",
    "load_scene",
    "save_obj",
    "save_scene",
    "tokenize_caption",
]
