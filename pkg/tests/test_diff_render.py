import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation
import torch

from combiverse.diff_render import (
    ComposedScene,
    Placement,
    RendererSettings,
    ViewSampler,
    apply_transform,
    dump_views,
    euler_matrix,
    look_at,
    reference_camera,
    render,
    render_depth,
    sample_novel_views,
)
from combiverse.diff_render.views import sample_angles
from combiverse.errors import ValidationError
from combiverse.scene_model.mesh import unit_cube, unit_quad
from combiverse.scene_model.types import CameraSpec, PlacementParams

SETTINGS = RendererSettings(resolution=32)


def ortho_camera(size: int = 32, focal: float = 32.0) -> CameraSpec:
    return CameraSpec(np.eye(4), size, size, focal=focal, orthographic=True)


def test_identity_transform_keeps_vertices():
    cube = unit_cube()
    out = apply_transform(cube, PlacementParams())
    assert np.allclose(out.numpy(), cube.vertices)


def test_scale_doubles_vertices():
    cube = unit_cube()
    out = apply_transform(cube, PlacementParams(scale=2.0))
    assert np.allclose(out.numpy(), 2.0 * cube.vertices)


def test_z_rotation_quarter_turn():
    out = apply_transform(np.array([[1.0, 0.0, 0.0]]), PlacementParams(rotation=(0, 0, math.pi / 2)))
    assert np.allclose(out.numpy(), [[0.0, 1.0, 0.0]], atol=1e-6)


def test_euler_matrix_matches_extrinsic_xyz():
    rng = np.random.default_rng(2)
    for angles in rng.uniform(-math.pi, math.pi, size=(20, 3)):
        ours = euler_matrix(torch.tensor(angles)).numpy()
        assert np.allclose(ours, Rotation.from_euler("xyz", angles).as_matrix(), atol=1e-12)


def test_transform_order_scale_rotate_translate():
    params = PlacementParams(scale=0.5, rotation=(0.3, -0.2, 1.1), translation=(1.0, 2.0, 3.0))
    points = np.random.default_rng(3).normal(size=(10, 3))
    expected = Rotation.from_euler("xyz", params.rotation).apply(0.5 * points) + params.translation
    assert np.allclose(apply_transform(points, params).numpy(), expected)


def test_non_finite_placement_rejected():
    placement = Placement(
        scale=torch.tensor(1.0, dtype=torch.float64),
        rotation=torch.zeros(3, dtype=torch.float64),
        translation=torch.tensor([0.0, float("nan"), 0.0], dtype=torch.float64),
    )
    with pytest.raises(ValidationError):
        apply_transform(unit_cube(), placement)


def test_object_behind_camera_is_transparent():
    scene = ComposedScene.of([unit_cube()], [PlacementParams(translation=(0.0, 0.0, -3.0))])
    camera = CameraSpec(np.eye(4), 32, 32, focal=32.0)
    out = render(scene, camera, SETTINGS)
    assert float(out.alpha.max()) == 0.0
    assert float(out.rgb.abs().max()) == 0.0


def test_facing_triangle_covers_center_pixel():
    scene = ComposedScene.of(
        [unit_quad((0.2, 0.9, 0.3))], [PlacementParams(scale=0.5, translation=(0.0, 0.0, 2.0))]
    )
    out = render(scene, ortho_camera(), SETTINGS)
    assert float(out.alpha[16, 16]) >= 0.99
    assert np.allclose(out.rgb[16, 16].detach().numpy(), (0.2, 0.9, 0.3), atol=0.01)
    assert float(out.alpha[0, 0]) < 0.01


def test_plane_depth_is_constant():
    scene = ComposedScene.of([unit_quad()], [PlacementParams(translation=(0.0, 0.0, 2.0))])
    depth = render_depth(scene, ortho_camera(), SETTINGS)
    out = render(scene, ortho_camera(), SETTINGS)
    covered = out.alpha > 0.5
    assert bool(covered.any())
    assert torch.allclose(depth[covered], torch.full_like(depth[covered], 2.0))


def test_nearer_square_occludes_farther():
    near = (unit_quad((1.0, 0.0, 0.0)), PlacementParams(translation=(-0.1, 0.0, 1.0)))
    far = (unit_quad((0.0, 0.0, 1.0)), PlacementParams(translation=(0.1, 0.0, 2.0)))
    out = render(ComposedScene.of([far[0], near[0]], [far[1], near[1]]), ortho_camera(), SETTINGS)
    # column 16 lies inside both squares
    color = out.rgb[16, 16].detach().numpy()
    assert np.allclose(color, (1.0, 0.0, 0.0), atol=0.05)
    assert float(out.depth[16, 16]) == pytest.approx(1.0, abs=0.05)
    # right of the near square only the far one shows
    assert np.allclose(out.rgb[16, 31].detach().numpy(), (0.0, 0.0, 1.0), atol=0.05)


def test_render_gradient_matches_finite_difference():
    camera = CameraSpec(np.eye(4), 32, 32, focal=40.0)
    weights = torch.linspace(0.0, 1.0, 32, dtype=torch.float64)[None, :] * torch.ones(32, 1, dtype=torch.float64)
    mesh = unit_quad((0.7, 0.3, 0.1))

    def loss(translation: torch.Tensor) -> torch.Tensor:
        placement = Placement(
            scale=torch.tensor(0.6, dtype=torch.float64),
            rotation=torch.tensor([0.0, 0.0, 0.2], dtype=torch.float64),
            translation=translation,
        )
        out = render(ComposedScene.of([mesh], [placement]), camera, SETTINGS)
        return (out.rgb[..., 0] * weights).sum() + (out.alpha * weights.T).sum()

    start = torch.tensor([0.05, -0.02, 2.0], dtype=torch.float64, requires_grad=True)
    (grad,) = torch.autograd.grad(loss(start), start)
    h = 1e-5
    for axis in range(3):
        step = torch.zeros(3, dtype=torch.float64)
        step[axis] = h
        with torch.no_grad():
            numeric = (loss(start.detach() + step) - loss(start.detach() - step)) / (2 * h)
        assert float(grad[axis]) == pytest.approx(float(numeric), rel=1e-3, abs=1e-4)


PINHOLE_64 = CameraSpec(np.eye(4), 64, 64, focal=100.0)
TWO_CUBES = (unit_cube((0.9, 0.2, 0.1)), unit_cube((0.1, 0.3, 0.9)))
# per object: log scale, rotation xyz, translation xyz
TWO_CUBE_PARAMS = (
    (math.log(0.3), 0.35, -0.5, 0.2, -0.3, 0.06, 2.0),
    (math.log(0.25), -0.3, 0.45, -0.15, 0.28, -0.05, 2.3),
)
ROTATED_CUBE_PARAMS = ((0.0, 0.4, 0.7, -0.3, 0.05, -0.03, 4.5),)
RGB_WEIGHTS = torch.as_tensor(np.random.default_rng(11).uniform(0.0, 1.0, size=(64, 64, 3)))


def _placements(theta: torch.Tensor) -> list[Placement]:
    return [
        Placement(scale=torch.exp(row[0]), rotation=row[1:4], translation=row[4:7])
        for row in theta.reshape(-1, 7)
    ]


def _render_loss(meshes, theta: torch.Tensor, channel: str) -> torch.Tensor:
    out = render(ComposedScene.of(meshes, _placements(theta)), PINHOLE_64, RendererSettings(resolution=64))
    if channel == "rgb":
        return (out.rgb * RGB_WEIGHTS).sum()
    return out.depth.mean()


def _check_gradients(meshes, params, channel: str, eps: float = 1e-3) -> None:
    start = torch.tensor(params, dtype=torch.float64).reshape(-1)
    theta = start.clone().requires_grad_(True)
    (analytic,) = torch.autograd.grad(_render_loss(meshes, theta, channel), theta)
    numeric = torch.zeros_like(start)
    with torch.no_grad():
        for k in range(len(start)):
            step = torch.zeros_like(start)
            step[k] = eps
            plus = _render_loss(meshes, start + step, channel)
            minus = _render_loss(meshes, start - step, channel)
            numeric[k] = (plus - minus) / (2 * eps)
    floor = 1e-3 * float(numeric.abs().max())
    for k in range(len(start)):
        assert float(analytic[k]) == pytest.approx(float(numeric[k]), rel=1e-2, abs=floor), (
            f"{channel} object {k // 7} parameter {k % 7}"
        )


@pytest.mark.parametrize("channel", ["rgb", "depth"])
def test_two_object_gradients_match_finite_differences(channel):
    _check_gradients(TWO_CUBES, TWO_CUBE_PARAMS, channel)


def test_rotated_cube_depth_gradient_matches_finite_differences():
    _check_gradients((unit_cube(),), ROTATED_CUBE_PARAMS, "depth")


def test_depth_fades_continuously_off_the_silhouette():
    scene = ComposedScene.of([unit_quad()], [PlacementParams(scale=0.5, translation=(0.0, 0.0, 2.0))])
    out = render(scene, ortho_camera(), SETTINGS)
    # depth scales with coverage instead of dropping to 0 at a threshold
    row = out.depth[16].detach().numpy()
    assert row[16] == pytest.approx(2.0, abs=1e-5)
    assert np.all(row >= 0.0) and np.all(row <= 2.0 + 1e-9)
    ratio = row / 2.0
    alpha = out.alpha[16].detach().numpy()
    assert np.allclose(ratio, alpha / (alpha + 1e-6), atol=1e-9)


def test_reference_camera_reprojects_box_center():
    camera = reference_camera((200, 100), 64, 2.0)
    assert (camera.width, camera.height) == (64, 32)
    # object at x = 0.25 scene units (pixel_to_scene = 1 / 200) sits at image x = 150
    u = camera.principal_point[0] + camera.focal * 0.25 / 2.0
    assert u == pytest.approx(150 / 200 * 64)


def test_look_at_points_forward():
    pose = look_at((0.0, 0.0, -2.0), (0.0, 0.0, 0.0))
    assert np.allclose(pose[:3, 2], (0.0, 0.0, 1.0))
    assert np.allclose(pose[:3, 1], (0.0, 1.0, 0.0))
    with pytest.raises(ValidationError):
        look_at((1.0, 1.0, 1.0), (1.0, 1.0, 1.0))


def test_novel_views_count_and_determinism():
    sampler = ViewSampler(radius=2.0, center=(0.0, 0.0, 2.0), seed=5)
    first = sample_novel_views(sampler, iteration=3)
    second = sample_novel_views(sampler, iteration=3)
    assert len(first) == 10
    assert all(np.array_equal(a.pose, b.pose) for a, b in zip(first, second, strict=True))
    other = sample_novel_views(sampler, iteration=4)
    assert not np.array_equal(first[0].pose, other[0].pose)
    for camera in first:
        assert np.linalg.norm(camera.position - np.array([0.0, 0.0, 2.0])) == pytest.approx(2.0)


def test_view_angles_stay_in_range():
    sampler = ViewSampler(count=1000, elevation=(-10.0, 45.0), azimuth=(0.0, 360.0))
    angles = sample_angles(sampler, 0)
    assert np.all((angles[:, 0] >= 0.0) & (angles[:, 0] <= 360.0))
    assert np.all((angles[:, 1] >= -10.0) & (angles[:, 1] <= 45.0))


def test_view_sampler_validation():
    with pytest.raises(ValidationError):
        ViewSampler(count=0)
    with pytest.raises(ValidationError):
        ViewSampler(elevation=(30.0, 10.0))


def test_dump_views_writes_pngs(tmp_path):
    scene = ComposedScene.of([unit_quad()], [PlacementParams(translation=(0.0, 0.0, 2.0))])
    out = render(scene, ortho_camera(), SETTINGS)
    paths = dump_views([out, out], tmp_path, iteration=7)
    assert [p.name for p in paths] == ["iter_00007_view_00.png", "iter_00007_view_01.png"]
    assert all(p.exists() for p in paths)
