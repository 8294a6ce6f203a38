import math

import numpy as np
import pytest
import torch

from combiverse.errors import ConfigurationError, ConformanceError, ValidationError
from combiverse.guidance import (
    PRESETS,
    GuidanceConfig,
    NoiseSchedule,
    PotentialTerm,
    SyntheticScoreProvider,
    SyntheticSpec,
    TimestepSampler,
    TokenScaling,
    attention_maps,
    depth_guidance_loss,
    guidance_preset,
    provider_conformance_check,
    reference_loss,
    reweight_attention,
    sample_timestep,
    score_distillation_loss,
    sds_gradient,
    ssds_gradient,
    synthetic_score_provider,
    weighting,
)
from combiverse.guidance.synthetic import pixel_coordinates

CAPTION = "a squirrel is sitting on a box"
CONSTANT = weighting("constant")


def quadratic_provider(*targets: tuple[int, float]) -> SyntheticScoreProvider:
    terms = tuple(PotentialTerm(token=token, kind="quadratic", target=value) for token, value in targets)
    return SyntheticScoreProvider(SyntheticSpec(caption=CAPTION, terms=terms))


def leaf(shape=(3, 8, 8), seed: int = 0) -> torch.Tensor:
    values = np.random.default_rng(seed).uniform(0.0, 1.0, shape)
    return torch.tensor(values, dtype=torch.float64, requires_grad=True)


# -------------------------------------------------------------------
# Attention
# -------------------------------------------------------------------


def test_single_key_attention_is_one():
    maps = attention_maps(np.random.default_rng(0).normal(size=(5, 4)), np.ones((1, 4)))
    assert np.array_equal(maps, np.ones((5, 1)))


def test_orthogonal_query_attends_uniformly():
    maps = attention_maps(np.zeros((1, 3)), np.eye(3))
    assert np.allclose(maps, 1 / 3)


def test_attention_matches_softmax_by_hand():
    queries = np.array([[1.0, 0.0], [0.5, -1.0]])
    keys = np.array([[2.0, 1.0], [0.0, 3.0]])
    logits = queries @ keys.T / math.sqrt(2)
    expected = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    assert np.allclose(attention_maps(queries, keys), expected, atol=1e-9)


def test_reweight_scales_only_designated_columns():
    maps = np.array([[0.1, 0.2, 0.3, 0.4]])
    out = reweight_attention(maps, TokenScaling.of([1], 25))
    assert np.allclose(out, [[0.1, 5.0, 0.3, 0.4]])
    # no renormalization afterwards
    assert out.sum() > 1.0
    assert np.array_equal(maps, [[0.1, 0.2, 0.3, 0.4]])


def test_reweight_several_tokens():
    out = reweight_attention(np.full((2, 4), 0.25), TokenScaling.of([0, 2], 2))
    assert np.allclose(out, [[0.5, 0.25, 0.5, 0.25]] * 2)


def test_reweight_identity_cases():
    maps = attention_maps(np.random.default_rng(1).normal(size=(6, 4)), np.random.default_rng(2).normal(size=(5, 4)))
    assert np.array_equal(reweight_attention(maps, TokenScaling.of([3], 1.0)), maps)
    assert np.array_equal(reweight_attention(maps, None), maps)


def test_reweight_rejects_out_of_range_token():
    with pytest.raises(ValidationError):
        reweight_attention(np.full((1, 3), 1 / 3), TokenScaling.of([3], 2.0))
    with pytest.raises(ValidationError):
        TokenScaling.of([0], 0.0)


def test_attention_rows_sum_to_one_on_random_shapes():
    rng = np.random.default_rng(21)
    for _ in range(100):
        side = int(rng.integers(1, 65))
        n_keys, dim = int(rng.integers(1, 78)), int(rng.integers(1, 65))
        queries = rng.normal(scale=3.0, size=(side * side, dim))
        keys = rng.normal(scale=3.0, size=(n_keys, dim))
        maps = attention_maps(queries, keys)
        assert maps.shape == (side * side, n_keys)
        assert np.all(maps >= 0.0)
        assert np.allclose(maps.sum(axis=1), 1.0, atol=1e-12)


def test_reweight_matches_column_loop_on_random_maps():
    rng = np.random.default_rng(22)
    for _ in range(100):
        n_keys = int(rng.integers(1, 78))
        maps = rng.random((int(rng.integers(1, 4)), int(rng.integers(1, 257)), n_keys))
        chosen = rng.choice(n_keys, size=int(rng.integers(1, n_keys + 1)), replace=False)
        multiplier = float(rng.uniform(0.1, 50.0))
        out = reweight_attention(maps, TokenScaling.of(chosen.tolist(), multiplier))
        for j in range(n_keys):
            if j in chosen:
                assert np.array_equal(out[..., j], maps[..., j] * multiplier)
            else:
                assert np.array_equal(out[..., j], maps[..., j])


# -------------------------------------------------------------------
# Timesteps and schedules
# -------------------------------------------------------------------


def test_timesteps_stay_in_range():
    sampler = TimestepSampler(800, 900, seed=3)
    draws = [sample_timestep(sampler) for _ in range(1000)]
    assert all(800 <= t <= 900 for t in draws)


def test_timestep_range_is_inclusive():
    sampler = TimestepSampler(800, 900, seed=4)
    draws = {sample_timestep(sampler) for _ in range(5000)}
    assert {800, 900} <= draws


@pytest.mark.parametrize(("low", "high"), [(0, 10), (900, 800), (10, 1000)])
def test_timestep_sampler_rejects_bad_range(low, high):
    with pytest.raises(ValidationError):
        TimestepSampler(low, high)


def test_preset_timestep_ranges():
    assert guidance_preset("ssds-low").timesteps == (100, 200)
    assert guidance_preset("ssds-uniform").timesteps == (20, 980)
    assert guidance_preset("ssds-full").timesteps == (800, 900)
    assert set(PRESETS) == {"base", "depth", "sds", "ssds-low", "ssds-uniform", "ssds-full"}
    with pytest.raises(ValidationError):
        guidance_preset("ssds-mid")


def test_linear_schedule_is_variance_preserving():
    schedule = NoiseSchedule.linear()
    alpha, sigma = schedule.coefficients(500)
    assert alpha**2 + sigma**2 == pytest.approx(1.0)
    assert schedule.coefficients(999)[0] < schedule.coefficients(0)[0]
    with pytest.raises(ValidationError):
        schedule.coefficients(1000)


def test_unknown_weighting():
    with pytest.raises(ValidationError):
        weighting("snr")


# -------------------------------------------------------------------
# Distillation
# -------------------------------------------------------------------


def test_zero_residual_provider_gives_zero_gradient():
    provider = quadratic_provider()
    x = leaf()
    (grad,) = sds_gradient(
        x, provider, provider.encode_prompt(CAPTION), provider.schedule, TimestepSampler(), CONSTANT, [x],
        rng=np.random.default_rng(0),
    )
    assert torch.equal(grad, torch.zeros_like(x))


def test_quadratic_potential_gradient_is_residual():
    provider = quadratic_provider((1, 0.3))
    x = leaf()
    (grad,) = sds_gradient(
        x, provider, provider.encode_prompt(CAPTION), provider.schedule, TimestepSampler(), CONSTANT, [x],
        rng=np.random.default_rng(1),
    )
    assert torch.allclose(grad, x.detach() - 0.3, atol=1e-12)


def test_unit_multiplier_matches_plain_distillation():
    provider = quadratic_provider((1, 0.2), (3, 0.8))
    embedding = provider.encode_prompt(CAPTION)
    x = leaf(seed=2)
    plain = sds_gradient(
        x, provider, embedding, provider.schedule, TimestepSampler(), CONSTANT, [x],
        rng=np.random.default_rng(7),
    )
    spatial = ssds_gradient(
        x, provider, embedding, provider.schedule, TimestepSampler(), CONSTANT, TokenScaling.of([3], 1.0), [x],
        rng=np.random.default_rng(7),
    )
    assert torch.equal(plain[0], spatial[0])


def test_scaling_aligns_gradient_with_spatial_term():
    rng = np.random.default_rng(5)
    content = tuple(rng.uniform(0, 1, 3))
    spatial = tuple(rng.uniform(0, 1, 3))
    provider = SyntheticScoreProvider(
        SyntheticSpec(
            caption=CAPTION,
            terms=(
                PotentialTerm(token=1, kind="quadratic", target=content),
                PotentialTerm(token=3, kind="quadratic", target=spatial),
            ),
        )
    )
    x = leaf(seed=6)
    (grad,) = ssds_gradient(
        x, provider, provider.encode_prompt(CAPTION), provider.schedule, TimestepSampler(), CONSTANT,
        TokenScaling.of([3], 25.0), [x], rng=np.random.default_rng(8),
    )
    toward = x.detach() - torch.tensor(spatial, dtype=torch.float64)[:, None, None]
    cosine = float((grad * toward).sum() / (grad.norm() * toward.norm()))
    assert math.degrees(math.acos(min(1.0, cosine))) < 10.0


def test_stationary_point_moves_toward_scaled_target():
    provider = quadratic_provider((1, 0.0), (3, 1.0))
    embedding = provider.encode_prompt(CAPTION)
    previous = None
    for c in (1.0, 5.0, 25.0):
        scaling = TokenScaling.of([3], c)
        x = torch.full((3, 4, 4), c / (1.0 + c), dtype=torch.float64, requires_grad=True)
        (grad,) = ssds_gradient(
            x, provider, embedding, provider.schedule, TimestepSampler(), CONSTANT, scaling, [x],
            rng=np.random.default_rng(0),
        )
        assert float(grad.abs().max()) < 1e-9
        distance = 1.0 - c / (1.0 + c)
        if previous is not None:
            assert distance < previous
        previous = distance


def test_centroid_term_pulls_sprite_toward_target():
    target = (0.2, 0.1)
    provider = SyntheticScoreProvider(
        SyntheticSpec(caption=CAPTION, terms=(PotentialTerm(token=3, kind="centroid", offset=target),))
    )
    center = torch.tensor([-0.1, -0.1], dtype=torch.float64, requires_grad=True)
    xs, ys = pixel_coordinates(16, 16)
    blob = torch.exp(-((xs - center[0]) ** 2 + (ys - center[1]) ** 2) / (2 * 0.05**2))
    image = torch.stack([blob, torch.zeros_like(blob), torch.zeros_like(blob)])
    (grad,) = ssds_gradient(
        image, provider, provider.encode_prompt(CAPTION), provider.schedule, TimestepSampler(), CONSTANT,
        TokenScaling.of([3], 25.0), [center], rng=np.random.default_rng(1),
    )
    direction = torch.tensor(target, dtype=torch.float64) - center.detach()
    assert float(-(grad * direction).sum()) > 0.0


def test_distillation_step_reports_draw():
    provider = quadratic_provider((1, 0.5))
    x = leaf()
    loss, step = score_distillation_loss(
        x, provider, provider.encode_prompt(CAPTION), provider.schedule, TimestepSampler(), CONSTANT, None,
        np.random.default_rng(2),
    )
    assert 800 <= step.timestep <= 900
    residual = x.detach() - 0.5
    assert step.loss == pytest.approx(0.5 * float((residual**2).sum()))
    assert loss.requires_grad


def test_ssds_needs_scaling():
    provider = quadratic_provider()
    x = leaf()
    with pytest.raises(ValidationError):
        ssds_gradient(x, provider, provider.encode_prompt(CAPTION), provider.schedule, TimestepSampler(), CONSTANT, None, [x])


def test_synthetic_multipliers_follow_scaling():
    provider = quadratic_provider()
    embedding = provider.encode_prompt(CAPTION)
    u = provider.token_multipliers(embedding, TokenScaling.of([3, 4], 25.0))
    assert u[3] == pytest.approx(25.0)
    assert u[4] == pytest.approx(25.0)
    assert np.array_equal(np.delete(u, [3, 4]), np.ones(5))


def test_synthetic_provider_from_mapping():
    provider = synthetic_score_provider(
        {"caption": CAPTION, "terms": [{"token": 3, "kind": "mass", "target": 0.5}], "seed": 2}
    )
    assert provider.spec.terms[0].kind == "mass"
    with pytest.raises(ValidationError):
        synthetic_score_provider({"caption": CAPTION, "temperature": 1.0})
    with pytest.raises(ValidationError):
        synthetic_score_provider({"caption": CAPTION, "extra": {}})
    with pytest.raises(TypeError):
        SyntheticSpec(caption=CAPTION, extra={})
    with pytest.raises(ValidationError):
        synthetic_score_provider({"caption": CAPTION, "terms": [{"token": 9, "kind": "mass"}]})


def test_synthetic_provider_requires_hint():
    provider = quadratic_provider()
    noisy = torch.zeros(3, 4, 4, dtype=torch.float64)
    with pytest.raises(ValidationError):
        provider.predict_noise(noisy, provider.encode_prompt(CAPTION), 850)


# -------------------------------------------------------------------
# Conformance
# -------------------------------------------------------------------


class _RenormalizingProvider(SyntheticScoreProvider):
    def introspect_attention(self, embedding, scaling=None):
        maps = super().introspect_attention(embedding, scaling)
        return [m / m.sum(axis=-1, keepdims=True) for m in maps]


class _DriftingProvider(SyntheticScoreProvider):
    def predict_noise(self, noisy, embedding, timestep, scaling=None, *, hint=None):
        out = super().predict_noise(noisy, embedding, timestep, scaling, hint=hint)
        return out + 1e-3 if scaling is not None else out


def test_synthetic_provider_conforms():
    report = provider_conformance_check(quadratic_provider((1, 0.5)))
    assert report.sites == 2
    assert report.scale_error == 0.0
    assert report.drift <= 1e-6


@pytest.mark.parametrize(
    ("provider_cls", "check"), [(_RenormalizingProvider, "b"), (_DriftingProvider, "c")]
)
def test_non_conforming_providers_fail(provider_cls, check):
    provider = provider_cls(SyntheticSpec(caption=CAPTION))
    with pytest.raises(ConformanceError) as info:
        provider_conformance_check(provider)
    assert info.value.check == check
    assert info.value.exit_code == 2


def test_provider_without_sites_fails_first_check():
    provider = SyntheticScoreProvider(SyntheticSpec(caption=CAPTION, sites=0))
    with pytest.raises(ConformanceError) as info:
        provider_conformance_check(provider)
    assert info.value.check == "a"


# -------------------------------------------------------------------
# Losses
# -------------------------------------------------------------------


def test_reference_loss_identical_is_zero():
    image = torch.rand(6, 5, 4, dtype=torch.float64)
    assert float(reference_loss(image, image.clone())) == 0.0


def test_reference_loss_single_alpha_pixel():
    ours = torch.zeros(10, 10, 4, dtype=torch.float64)
    theirs = ours.clone()
    theirs[3, 4, 3] = 0.5
    assert float(reference_loss(ours, theirs)) == pytest.approx(5.0)


def test_reference_loss_matches_mean_absolute_error():
    rng = np.random.default_rng(9)
    a, b = rng.uniform(0, 1, (2, 7, 9, 4))
    expected = 3.0 * np.abs(a[..., :3] - b[..., :3]).mean() + 2.0 * np.abs(a[..., 3] - b[..., 3]).mean()
    got = reference_loss(torch.as_tensor(a), b, lambda_rgb=3.0, lambda_alpha=2.0)
    assert float(got) == pytest.approx(expected, rel=1e-12)


def test_reference_loss_matches_pixel_loop():
    rng = np.random.default_rng(23)
    for _ in range(100):
        height, width = (int(v) for v in rng.integers(1, 9, size=2))
        a, b = rng.uniform(0, 1, (2, height, width, 4))
        lambda_rgb, lambda_alpha = (float(v) for v in rng.uniform(0, 2000, size=2))
        rgb = sum(abs(a[i, j, c] - b[i, j, c]) for i in range(height) for j in range(width) for c in range(3))
        alpha = sum(abs(a[i, j, 3] - b[i, j, 3]) for i in range(height) for j in range(width))
        expected = lambda_rgb * rgb / (3 * height * width) + lambda_alpha * alpha / (height * width)
        got = reference_loss(torch.as_tensor(a), b, lambda_rgb=lambda_rgb, lambda_alpha=lambda_alpha)
        assert float(got) == pytest.approx(expected, rel=1e-10, abs=1e-12)


def test_reference_loss_is_symmetric_and_linear_in_weights():
    rng = np.random.default_rng(24)
    for _ in range(100):
        height, width = (int(v) for v in rng.integers(1, 33, size=2))
        a, b = (torch.as_tensor(x) for x in rng.uniform(0, 1, (2, height, width, 4)))
        lambda_rgb, lambda_alpha = (float(v) for v in rng.uniform(0, 2000, size=2))
        forward = float(reference_loss(a, b, lambda_rgb, lambda_alpha))
        assert forward == float(reference_loss(b, a, lambda_rgb, lambda_alpha))
        rgb_only = float(reference_loss(a, b, 1.0, 0.0))
        alpha_only = float(reference_loss(a, b, 0.0, 1.0))
        assert forward == pytest.approx(lambda_rgb * rgb_only + lambda_alpha * alpha_only, rel=1e-12)


def test_reference_loss_rejects_size_mismatch():
    with pytest.raises(ValidationError):
        reference_loss(torch.zeros(4, 4, 4), torch.zeros(4, 5, 4))


def test_depth_loss_ignores_shift_and_scale():
    depth = torch.as_tensor(np.random.default_rng(3).uniform(1, 4, (8, 8)))
    mask = np.ones((8, 8), dtype=bool)
    assert float(depth_guidance_loss(depth, depth.numpy().copy(), mask)) == pytest.approx(0.0, abs=1e-12)
    assert float(depth_guidance_loss(depth, 2.0 * depth.numpy() + 3.0, mask)) == pytest.approx(0.0, abs=1e-9)


def test_depth_loss_matches_normalized_mae():
    rng = np.random.default_rng(4)
    ours, theirs = rng.uniform(1, 5, (2, 6, 6))
    mask = rng.random((6, 6)) < 0.6
    mask[0, :2] = True

    def normalized(values):
        picked = values[mask]
        return (picked - picked.mean()) / picked.std()

    expected = np.abs(normalized(ours) - normalized(theirs)).mean()
    assert float(depth_guidance_loss(torch.as_tensor(ours), theirs, mask)) == pytest.approx(expected, rel=1e-9)


def test_depth_loss_rejects_bad_input():
    depth = torch.ones(4, 4, dtype=torch.float64)
    with pytest.raises(ValidationError):
        depth_guidance_loss(depth, np.ones((4, 4)), np.zeros((4, 4), dtype=bool))
    with pytest.raises(ValidationError):
        depth_guidance_loss(depth, np.ones((4, 5)), np.ones((4, 4), dtype=bool))


# -------------------------------------------------------------------
# Settings
# -------------------------------------------------------------------


def test_guidance_defaults():
    config = GuidanceConfig()
    assert config.mode == "ssds"
    assert config.multiplier == 25.0
    assert config.timesteps == (800, 900)
    assert (config.lambda_rgb, config.lambda_alpha) == (1000.0, 1000.0)


def test_guidance_config_names_bad_field():
    with pytest.raises(ConfigurationError) as info:
        GuidanceConfig.from_dict({"bogus": 1})
    assert info.value.field == "guidance.bogus"
    with pytest.raises(ConfigurationError) as info:
        GuidanceConfig.from_dict({"timesteps": [900, 800]})
    assert info.value.field == "guidance.timesteps"


def test_scaling_only_in_spatial_mode():
    assert GuidanceConfig(mode="sds").scaling((3, 4)) is None
    scaling = GuidanceConfig().scaling((3, 4))
    assert scaling.token_indices == (3, 4)
    assert GuidanceConfig(token_indices=(2,)).scaling((3, 4)).token_indices == (2,)
    with pytest.raises(ValidationError):
        GuidanceConfig().scaling(())
