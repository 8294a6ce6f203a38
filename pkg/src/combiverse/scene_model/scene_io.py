"""Read and write scene documents.

A scene document is YAML (JSON is accepted as a YAML subset)::

    image: scene.png
    objects:
      - bbox: [x_min, y_min, x_max, y_max]
    caption: a squirrel is sitting on a box
    spatial_tokens: [3, 4]

Relative image paths resolve against the document's directory.
"""

from __future__ import annotations

from collections.abc import Mapping
import pathlib
from typing import Any

import yaml

from combiverse.errors import ConfigurationError, ValidationError
from combiverse.scene_model.raster import read_rgba, write_png
from combiverse.scene_model.types import ObjectSpec, SceneInput
from combiverse.utils_logger import logger

SCENE_KEYS = frozenset({"image", "objects", "caption", "spatial_tokens"})


def _parse_document(source: str | pathlib.Path | Mapping[str, Any]) -> tuple[dict, pathlib.Path]:
    if isinstance(source, Mapping):
        return dict(source), pathlib.Path.cwd()
    if isinstance(source, pathlib.Path):
        if not source.exists():
            raise ConfigurationError("scene", f"document not found: {source}")
        text, base = source.read_text(encoding="utf-8"), source.parent
    else:
        text, base = source, pathlib.Path.cwd()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigurationError("scene", f"not valid YAML/JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError("scene", "document must be a mapping")
    return data, base


def _parse_objects(raw: Any) -> tuple[ObjectSpec, ...]:
    if not isinstance(raw, list) or not raw:
        raise ConfigurationError("objects", "must be a non-empty list")
    specs = []
    for i, entry in enumerate(raw):
        field = f"objects[{i}].bbox"
        if not isinstance(entry, Mapping) or set(entry) != {"bbox"}:
            raise ConfigurationError(f"objects[{i}]", "each object is a mapping with only 'bbox'")
        bbox = entry["bbox"]
        if (
            not isinstance(bbox, list | tuple)
            or len(bbox) != 4
            or not all(isinstance(c, int) and not isinstance(c, bool) for c in bbox)
        ):
            raise ConfigurationError(field, f"must be four integers, got {bbox!r}")
        specs.append(ObjectSpec(tuple(bbox)))
    return tuple(specs)


def load_scene(
    source: str | pathlib.Path | Mapping[str, Any], *, base_dir: pathlib.Path | None = None
) -> SceneInput:
    """Parse and validate a scene document, decoding the referenced image.

    Args:
        source: A path to a YAML/JSON file, the document text, or an already parsed mapping.
        base_dir: Directory for relative image paths (defaults to the document's folder).

    Returns:
        SceneInput: The validated scene.

    Raises:
        ConfigurationError: A field is missing, unknown or of the wrong type.
        ValidationError: A bounding box or token index is out of range.
    """
    data, doc_dir = _parse_document(source)
    base = base_dir or doc_dir

    unknown = set(data) - SCENE_KEYS
    if unknown:
        raise ConfigurationError(sorted(unknown)[0], "unknown scene field")
    for key in ("image", "objects", "caption"):
        if key not in data:
            raise ConfigurationError(key, "required field is missing")

    if not isinstance(data["image"], str) or not data["image"]:
        raise ConfigurationError("image", "must be a file path")
    if not isinstance(data["caption"], str):
        raise ConfigurationError("caption", "must be a string")
    tokens = data.get("spatial_tokens", [])
    if not isinstance(tokens, list) or not all(
        isinstance(t, int) and not isinstance(t, bool) for t in tokens
    ):
        raise ConfigurationError("spatial_tokens", "must be a list of integers")

    objects = _parse_objects(data["objects"])
    image_path = pathlib.Path(data["image"])
    if not image_path.is_absolute():
        image_path = base / image_path
    try:
        image = read_rgba(image_path)
    except ValidationError as e:
        raise ConfigurationError("image", str(e)) from e

    scene = SceneInput(
        image=image,
        objects=objects,
        caption=data["caption"],
        spatial_token_indices=tuple(tokens),
        image_path=image_path,
    )
    logger.debug(
        f"Loaded scene {image_path.name}: {len(objects)} objects, "
        f"{scene.image_size[0]}x{scene.image_size[1]} px"
    )
    return scene


def scene_document(scene: SceneInput, image_ref: str) -> dict[str, Any]:
    return {
        "image": image_ref,
        "objects": [{"bbox": list(spec.bbox)} for spec in scene.objects],
        "caption": scene.caption,
        "spatial_tokens": list(scene.spatial_token_indices),
    }


def save_scene(scene: SceneInput, path: str | pathlib.Path) -> pathlib.Path:
    """Write a scene document next to its image.

    The image is written as ``<stem>.png`` beside the document unless the
    scene already references a file in that folder.
    """
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if scene.image_path is not None and scene.image_path.parent.resolve() == path.parent.resolve():
        image_ref = scene.image_path.name
    else:
        image_ref = f"{path.stem}.png"
        write_png(path.parent / image_ref, scene.image)
    path.write_text(yaml.safe_dump(scene_document(scene, image_ref), sort_keys=False), encoding="utf-8")
    return path


__all__ = ["SCENE_KEYS", "load_scene", "save_scene", "scene_document"]
