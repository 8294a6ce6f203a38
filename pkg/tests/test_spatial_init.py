import numpy as np
import pytest

from combiverse.errors import DegenerateSegmentationError, ValidationError
from combiverse.scene_model.types import ObjectRecord, ObjectSpec
from combiverse.spatial_init import (
    DepthMap,
    MockDepth,
    average_object_depth,
    init_rotation,
    init_scale,
    init_translation,
    initialize_placements,
    load_depth,
    save_depth,
)


@pytest.mark.parametrize(
    ("bbox", "size", "expected"),
    [
        ((0, 0, 400, 400), (400, 400), 1.0),
        ((100, 150, 300, 250), (400, 400), 0.5),
        ((0, 0, 30, 90), (120, 90), 1.0),
    ],
)
def test_init_scale_examples(bbox, size, expected):
    assert init_scale(ObjectSpec(bbox), size) == pytest.approx(expected)


def test_init_scale_can_exceed_one():
    # a 30x90 box in a 120x60 image is taller than the image itself
    spec = ObjectSpec((0, 0, 30, 90))
    assert init_scale(spec, (120, 60)) == pytest.approx(1.5)


def test_init_scale_matches_ratio_and_ignores_position():
    rng = np.random.default_rng(31)
    for _ in range(100):
        width, height = (int(v) for v in rng.integers(8, 1025, size=2))
        box_w, box_h = int(rng.integers(1, width + 1)), int(rng.integers(1, height + 1))
        x0, y0 = int(rng.integers(0, width - box_w + 1)), int(rng.integers(0, height - box_h + 1))
        scale = init_scale(ObjectSpec((x0, y0, x0 + box_w, y0 + box_h)), (width, height))
        assert scale == pytest.approx(max(box_w / width, box_h / height), rel=1e-15)
        dx, dy = (int(v) for v in rng.integers(0, 500, size=2))
        moved = ObjectSpec((x0 + dx, y0 + dy, x0 + dx + box_w, y0 + dy + box_h))
        assert init_scale(moved, (width, height)) == scale


def test_average_depth_constant_and_pair():
    mask = np.ones((4, 4), dtype=bool)
    assert average_object_depth(DepthMap(np.full((4, 4), 2.0)), mask) == pytest.approx(2.0)

    values = np.full((4, 4), 9.0)
    values[0, 0], values[3, 3] = 1.0, 3.0
    pair = np.zeros((4, 4), dtype=bool)
    pair[0, 0] = pair[3, 3] = True
    assert average_object_depth(DepthMap(values), pair) == pytest.approx(2.0)


def test_average_depth_matches_masked_mean():
    rng = np.random.default_rng(4)
    for _ in range(100):
        values = rng.uniform(0.5, 5.0, size=(12, 9))
        mask = rng.random((12, 9)) < 0.3
        mask[0, 0] = True
        expected = sum(values[i, j] for i in range(12) for j in range(9) if mask[i, j]) / mask.sum()
        assert average_object_depth(DepthMap(values), mask) == pytest.approx(expected, rel=1e-12)


def test_average_depth_empty_mask():
    with pytest.raises(DegenerateSegmentationError):
        average_object_depth(DepthMap(np.ones((3, 3))), np.zeros((3, 3), dtype=bool))


def test_translation_centered_box():
    t = init_translation(ObjectSpec((100, 100, 300, 300)), (400, 400), 2.0)
    assert t == pytest.approx((0.0, 0.0, 2.0))


def test_translation_flips_y():
    # center (300, 100) in a 400x400 image
    t = init_translation(ObjectSpec((250, 50, 350, 150)), (400, 400), 1.5, pixel_to_scene=1.0)
    assert t == pytest.approx((100.0, 100.0, 1.5))


def test_translation_default_factor_is_inverse_width():
    t = init_translation(ObjectSpec((48, 0, 64, 16)), (64, 32), 1.0)
    assert t == pytest.approx((0.375, 0.125, 1.0))


def test_translation_is_shift_equivariant():
    rng = np.random.default_rng(8)
    for _ in range(100):
        x0, y0 = (int(v) for v in rng.integers(0, 50, size=2))
        dx, dy = (int(v) for v in rng.integers(0, 30, size=2))
        base = init_translation(ObjectSpec((x0, y0, x0 + 20, y0 + 10)), (200, 100), 2.0, 0.01)
        moved = init_translation(
            ObjectSpec((x0 + dx, y0 + dy, x0 + dx + 20, y0 + dy + 10)), (200, 100), 2.0, 0.01
        )
        assert moved[0] - base[0] == pytest.approx(dx * 0.01)
        assert moved[1] - base[1] == pytest.approx(-dy * 0.01)
        assert moved[2] == base[2]


def test_translation_rejects_bad_factor():
    with pytest.raises(ValidationError):
        init_translation(ObjectSpec((0, 0, 4, 4)), (8, 8), 1.0, pixel_to_scene=0.0)


def test_rotation_starts_at_zero():
    assert init_rotation() == (0.0, 0.0, 0.0)


def test_initialize_placements(two_box_scene):
    records = [
        ObjectRecord(index=i, spec=spec, image_size=(64, 48), mask=spec.indicator((64, 48)))
        for i, spec in enumerate(two_box_scene.objects)
    ]
    depth = MockDepth(near=1.0, far=3.0).depth(two_box_scene.image)
    placements = initialize_placements(records, depth)
    assert len(placements) == 2
    assert placements[0].scale == pytest.approx(max(20 / 64, 30 / 48))
    assert placements[0].rotation == (0.0, 0.0, 0.0)
    expected_depth = depth.values[10:40, 4:24].mean()
    assert placements[0].translation[2] == pytest.approx(expected_depth)
    # the second box sits higher in the image, so farther on the ground-plane gradient
    assert placements[1].translation[2] > placements[0].translation[2]


def test_depth_map_rejects_non_positive():
    with pytest.raises(ValidationError):
        DepthMap(np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        DepthMap(np.array([[1.0, np.inf]]))


def test_depth_file_round_trip(tmp_path):
    values = np.random.default_rng(0).uniform(0.1, 9.0, size=(7, 5))
    path = save_depth(DepthMap(values), tmp_path / "depth.bin")
    assert path.read_bytes()[:4] == b"CVDM"
    assert np.array_equal(load_depth(path).values, values)


def test_depth_file_rejects_foreign_data(tmp_path):
    path = tmp_path / "depth.bin"
    path.write_bytes(b"NOPE" + bytes(32))
    with pytest.raises(ValidationError):
        load_depth(path)
