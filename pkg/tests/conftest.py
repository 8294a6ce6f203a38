import pathlib

import numpy as np
import pytest
import yaml

from combiverse.scene_model.mesh import unit_cube
from combiverse.scene_model.raster import write_png
from combiverse.scene_model.types import ObjectRecord, ObjectSpec, SceneInput


def rgba_canvas(width: int, height: int) -> np.ndarray:
    return np.zeros((height, width, 4), dtype=np.uint8)


def paint(image: np.ndarray, bbox: tuple[int, int, int, int], color: tuple[int, int, int]) -> None:
    x_min, y_min, x_max, y_max = bbox
    image[y_min:y_max, x_min:x_max, :3] = color
    image[y_min:y_max, x_min:x_max, 3] = 255


@pytest.fixture
def two_box_image() -> np.ndarray:
    """64x48 image with a red and a blue opaque rectangle."""
    image = rgba_canvas(64, 48)
    paint(image, (4, 10, 24, 40), (220, 40, 40))
    paint(image, (36, 8, 60, 30), (40, 80, 220))
    return image


@pytest.fixture
def two_box_scene(two_box_image) -> SceneInput:
    return SceneInput(
        image=two_box_image,
        objects=(ObjectSpec((4, 10, 24, 40)), ObjectSpec((36, 8, 60, 30))),
        caption="a red box next to a blue box",
        spatial_token_indices=(3, 4),
    )


@pytest.fixture
def scene_file(tmp_path, two_box_image) -> pathlib.Path:
    """Scene document plus its PNG on disk."""
    write_png(tmp_path / "scene.png", two_box_image)
    path = tmp_path / "scene.yaml"
    document = {
        "image": "scene.png",
        "objects": [{"bbox": [4, 10, 24, 40]}, {"bbox": [36, 8, 60, 30]}],
        "caption": "a red box next to a blue box",
        "spatial_tokens": [3, 4],
    }
    path.write_text(yaml.safe_dump(document), encoding="utf-8")
    return path


def cube_records(count: int, image_size: tuple[int, int] = (32, 32)) -> list[ObjectRecord]:
    """Records carrying only a bbox and a unit cube, for combiner-level tests."""
    return [
        ObjectRecord(
            index=i,
            spec=ObjectSpec((0, 0, image_size[0], image_size[1])),
            image_size=image_size,
            mesh=unit_cube(),
        )
        for i in range(count)
    ]
