"""Viewing-condition sampling and the differentiable warp chain."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from signadv import transforms as tf
from signadv.errors import ValidationError
from signadv.geometry import apply_homography, polygon_area
from signadv.rng import substream
from signadv.signs import CornerAnnotation

from . import oracles


def make_photo(side=48, seed=77):
    photo = np.random.default_rng(seed).random((side, side, 3)).astype(np.float32)
    corners = CornerAnnotation(
        ((side * 0.2, side * 0.25), (side * 0.8, side * 0.2),
         (side * 0.85, side * 0.8), (side * 0.15, side * 0.75))
    )
    return photo, corners


# ---------------------------------------------------------------------------
# TransformSample validation


def test_identity_sample_is_valid_and_identity():
    s = tf.identity_sample(64)
    np.testing.assert_array_equal(s.homography, np.eye(3))
    assert s.crop_rect == (0, 0, 64, 64)
    assert s.brightness_delta == 0.0
    assert s.noise_sigma == 0.0
    np.testing.assert_allclose(s.projected_quad(), tf.UNIT_CORNERS * 64)
    assert s.crop_coverage() == pytest.approx(1.0)


def test_sample_rejects_malformed_homography():
    base = dict(brightness_delta=0.0, crop_rect=(0, 0, 64, 64), background_id=0, noise_seed=0)
    with pytest.raises(ValidationError):
        tf.TransformSample(homography=np.eye(2), **base)
    with pytest.raises(ValidationError):
        tf.TransformSample(homography=np.zeros((3, 3)), **base)
    scaled = np.eye(3) * 2.0  # invertible but last entry not 1
    with pytest.raises(ValidationError):
        tf.TransformSample(homography=scaled, **base)


def test_sample_rejects_out_of_range_brightness():
    with pytest.raises(ValidationError):
        tf.TransformSample(np.eye(3), 0.31, (0, 0, 64, 64), 0, 0)
    with pytest.raises(ValidationError):
        tf.TransformSample(np.eye(3), -0.35, (0, 0, 64, 64), 0, 0)


def test_sample_rejects_bad_crop():
    with pytest.raises(ValidationError):
        tf.TransformSample(np.eye(3), 0.0, (0, 0, 65, 64), 0, 0)
    with pytest.raises(ValidationError):
        tf.TransformSample(np.eye(3), 0.0, (-1, 0, 64, 64), 0, 0)
    with pytest.raises(ValidationError):
        tf.TransformSample(np.eye(3), 0.0, (0, 0, 0, 64), 0, 0)


def test_sample_rejects_low_coverage_crop():
    # Sign fills the frame; a corner crop keeps ~25% of it.
    with pytest.raises(ValidationError, match="0.6"):
        tf.TransformSample(np.eye(3), 0.0, (0, 0, 32, 32), 0, 0)


def test_experimental_sample_requires_matching_photo():
    photo, corners = make_photo(48)
    h = tf.annotation_homography(corners, 48)
    with pytest.raises(ValidationError, match="photo"):
        tf.TransformSample(h, 0.0, (0, 0, 48, 48), 0, 0, source="experimental",
                           instance_side=48)
    with pytest.raises(ValidationError):
        tf.TransformSample(h, 0.0, (0, 0, 48, 48), 0, 0, source="experimental",
                           instance_side=48, photo=photo[:32, :32])
    s = tf.TransformSample(h, 0.0, (0, 0, 48, 48), 0, 0, source="experimental",
                           instance_side=48, photo=photo)
    assert s.source == "experimental"


def test_unknown_source_rejected():
    with pytest.raises(ValidationError):
        tf.TransformSample(np.eye(3), 0.0, (0, 0, 64, 64), 0, 0, source="dream")


# ---------------------------------------------------------------------------
# DistributionConfig validation


def test_distribution_defaults_valid():
    cfg = tf.DistributionConfig()
    assert cfg.scale_range == (0.3, 1.0)
    assert cfg.experimental_fraction == 0.0


@pytest.mark.parametrize(
    "kwargs",
    [
        {"scale_range": (0.0, 1.0)},
        {"scale_range": (0.5, 1.5)},
        {"scale_range": (0.9, 0.3)},
        {"yaw_range": (-90.0, 0.0)},
        {"pitch_range": (0.0, 86.0)},
        {"brightness_range": (-0.5, 0.0)},
        {"experimental_fraction": 1.5},
        {"experimental_fraction": 0.5},  # no photos supplied
    ],
)
def test_distribution_rejects_bad_ranges(kwargs):
    with pytest.raises(ValidationError):
        tf.DistributionConfig(**kwargs)


def test_distribution_accepts_photos():
    cfg = tf.DistributionConfig(experimental_fraction=0.5, photos=(make_photo(48),))
    assert len(cfg.photos) == 1


# ---------------------------------------------------------------------------
# pose and annotation homographies


def test_frontal_full_scale_pose_is_identity():
    H = tf.pose_homography(0.0, 0.0, 1.0)
    np.testing.assert_allclose(H, np.eye(3), atol=1e-12)


def test_frontal_pose_scales_about_center():
    H = tf.pose_homography(0.0, 0.0, 0.5)
    quad = apply_homography(H, tf.UNIT_CORNERS)
    np.testing.assert_allclose(quad.mean(axis=0), [0.5, 0.5], atol=1e-12)
    side = quad[1, 0] - quad[0, 0]
    assert side == pytest.approx(0.5)


def test_yaw_compresses_horizontal_extent():
    H = tf.pose_homography(45.0, 0.0, 0.5)
    quad = apply_homography(H, tf.UNIT_CORNERS)
    width = quad[:, 0].max() - quad[:, 0].min()
    height = quad[:, 1].max() - quad[:, 1].min()
    assert width < height


def test_pitch_compresses_vertical_extent():
    H = tf.pose_homography(0.0, 14.0, 0.5)
    quad = apply_homography(H, tf.UNIT_CORNERS)
    width = quad[:, 0].max() - quad[:, 0].min()
    height = quad[:, 1].max() - quad[:, 1].min()
    assert height < width


def test_yaw_induces_perspective_foreshortening():
    # The near vertical edge must project longer than the far one.
    H = tf.pose_homography(40.0, 0.0, 0.5)
    quad = apply_homography(H, tf.UNIT_CORNERS)
    left = abs(quad[3, 1] - quad[0, 1])
    right = abs(quad[2, 1] - quad[1, 1])
    assert abs(left - right) > 1e-4


def test_pose_quad_always_inside_frame():
    rng = np.random.default_rng(70)
    for _ in range(200):
        H = tf.pose_homography(
            rng.uniform(-60, 60), rng.uniform(-15, 15), rng.uniform(0.3, 1.0),
            center=(rng.uniform(0, 1), rng.uniform(0, 1)),
        )
        quad = apply_homography(H, tf.UNIT_CORNERS)
        assert quad.min() >= -1e-9 and quad.max() <= 1.0 + 1e-9


def test_pose_rejects_bad_scale():
    with pytest.raises(ValidationError):
        tf.pose_homography(0.0, 0.0, 0.0)
    with pytest.raises(ValidationError):
        tf.pose_homography(0.0, 0.0, 1.2)


def test_annotation_homography_hits_corners():
    photo, corners = make_photo(48)
    H = tf.annotation_homography(corners, 48)
    got = apply_homography(H, tf.UNIT_CORNERS) * 48
    np.testing.assert_allclose(got, corners.as_array(), atol=1e-8)
    # Cross-check against the SVD estimator.
    H_ref = oracles.homography_svd(tf.UNIT_CORNERS, corners.as_array() / 48.0)
    np.testing.assert_allclose(H, H_ref, rtol=1e-7, atol=1e-9)


# ---------------------------------------------------------------------------
# sample_transform


def test_sampled_conditions_respect_ranges():
    cfg = tf.DistributionConfig(
        scale_range=(0.4, 0.9),
        yaw_range=(-30.0, 30.0),
        pitch_range=(-10.0, 10.0),
        brightness_range=(-0.2, 0.1),
    )
    rng = substream(123, "sample-bounds")
    for _ in range(300):
        s = tf.sample_transform(cfg, rng)
        assert s.source == "synthetic"
        assert -0.2 <= s.brightness_delta <= 0.1
        assert s.crop_coverage() >= tf.MIN_CROP_COVERAGE - 1e-9
        quad = s.projected_quad()
        assert quad.min() >= -1e-6 and quad.max() <= s.instance_side + 1e-6
        # Projected area cannot exceed the full-scale frontal area.
        assert polygon_area(quad) <= 0.9**2 * s.instance_side**2 + 1e-6
        assert abs(s.homography[2, 2] - 1.0) < 1e-12


def test_sample_transform_deterministic_per_stream():
    cfg = tf.DistributionConfig()
    a = tf.sample_transform(cfg, substream(9, "draw"))
    b = tf.sample_transform(cfg, substream(9, "draw"))
    c = tf.sample_transform(cfg, substream(10, "draw"))
    np.testing.assert_array_equal(a.homography, b.homography)
    assert a.crop_rect == b.crop_rect
    assert a.noise_seed == b.noise_seed
    assert a.noise_seed != c.noise_seed


def test_degenerate_ranges_pin_the_pose():
    cfg = tf.DistributionConfig(
        scale_range=(1.0, 1.0),
        yaw_range=(0.0, 0.0),
        pitch_range=(0.0, 0.0),
        brightness_range=(0.0, 0.0),
    )
    rng = substream(5, "degenerate")
    for _ in range(20):
        s = tf.sample_transform(cfg, rng)
        # At scale 1 the feasible center interval collapses to the frame
        # center, so the pose is exactly the identity.
        np.testing.assert_allclose(s.homography, np.eye(3), atol=1e-12)
        assert s.brightness_delta == 0.0


def test_experimental_fraction_one_uses_photos_only():
    photos = (make_photo(48, seed=1), make_photo(64, seed=2))
    cfg = tf.DistributionConfig(experimental_fraction=1.0, photos=photos)
    rng = substream(31, "exp")
    seen = set()
    for _ in range(40):
        s = tf.sample_transform(cfg, rng)
        assert s.source == "experimental"
        assert s.background_id in (0, 1)
        seen.add(s.background_id)
        photo, corners = photos[s.background_id]
        assert s.instance_side == photo.shape[0]
        np.testing.assert_array_equal(s.photo, photo)
        got = apply_homography(s.homography, tf.UNIT_CORNERS) * s.instance_side
        np.testing.assert_allclose(got, corners.as_array(), atol=1e-6)
    assert seen == {0, 1}


def test_experimental_fraction_mixes():
    cfg = tf.DistributionConfig(experimental_fraction=0.5, photos=(make_photo(48),))
    rng = substream(77, "mix")
    sources = [tf.sample_transform(cfg, rng).source for _ in range(200)]
    n_exp = sources.count("experimental")
    assert 60 < n_exp < 140  # loose binomial bounds around 100


# ---------------------------------------------------------------------------
# synthesize_instance


def test_identity_synthesis_equals_direct_resize(canonical32):
    # Upsample the canonical to the instance side so stage A is an exact
    # pixel copy; the whole chain then reduces to one bilinear resize.
    canonical = np.repeat(np.repeat(canonical32, 2, axis=0), 2, axis=1)
    s = tf.identity_sample(64)
    got = tf.synthesize_instance(canonical, s)
    want = tf.crop_resize(canonical.astype(np.float64), (0, 0, 64, 64), 32)
    np.testing.assert_allclose(got, want.astype(np.float32), atol=1e-7)


def test_identity_synthesis_at_matching_side_is_exact(canonical32):
    s = tf.identity_sample(32)
    got = tf.synthesize_instance(canonical32, s)
    np.testing.assert_allclose(got, canonical32, atol=1e-7)


def test_identity_resize_matches_scalar_bilinear_oracle(canonical32):
    canonical = np.repeat(np.repeat(canonical32, 2, axis=0), 2, axis=1).astype(np.float64)
    got = tf.synthesize_instance(canonical, tf.identity_sample(64))
    for b_y in (0, 7, 31):
        for b_x in (0, 13, 31):
            sx = (b_x + 0.5) * 64 / 32 - 0.5
            sy = (b_y + 0.5) * 64 / 32 - 0.5
            want = oracles.bilinear_zero_pad(canonical, sx, sy)
            np.testing.assert_allclose(got[b_y, b_x], want, atol=1e-6)


def test_brightness_shift_saturates(canonical32):
    s_up = tf.TransformSample(np.eye(3), 0.3, (0, 0, 32, 32), 0, 0,
                              instance_side=32, noise_sigma=0.0)
    bright = tf.synthesize_instance(canonical32, s_up)
    base = tf.synthesize_instance(canonical32, tf.identity_sample(32))
    assert bright.max() <= 1.0
    assert bright.mean() > base.mean()
    np.testing.assert_allclose(bright, np.clip(base + 0.3, 0.0, 1.0), atol=1e-6)


def test_noise_is_seeded(canonical32):
    mk = lambda seed: tf.TransformSample(
        np.eye(3), 0.0, (0, 0, 32, 32), 0, seed, instance_side=32, noise_sigma=0.05
    )
    a = tf.synthesize_instance(canonical32, mk(4))
    b = tf.synthesize_instance(canonical32, mk(4))
    c = tf.synthesize_instance(canonical32, mk(5))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_synthesis_output_contract_over_many_draws(canonical32):
    cfg = tf.DistributionConfig()
    rng = substream(2024, "contract")
    for _ in range(250):
        s = tf.sample_transform(cfg, rng)
        out = tf.synthesize_instance(canonical32, s)
        assert out.shape == (tf.MODEL_SIDE, tf.MODEL_SIDE, 3)
        assert out.dtype == np.float32
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert np.isfinite(out).all()


def test_experimental_synthesis_ignores_canonical_content(canonical32):
    photo, corners = make_photo(48)
    h = tf.annotation_homography(corners, 48)
    s = tf.TransformSample(h, 0.1, (0, 0, 48, 48), 0, 42, source="experimental",
                           instance_side=48, photo=photo)
    a = tf.synthesize_instance(canonical32, s)
    b = tf.synthesize_instance(np.zeros_like(canonical32), s)
    np.testing.assert_array_equal(a, b)


def test_synthesis_rejects_out_of_range_canonical():
    bad = np.full((32, 32, 3), 1.2, dtype=np.float32)
    with pytest.raises(ValidationError):
        tf.synthesize_instance(bad, tf.identity_sample(64))


def test_synthesis_rejects_non_square_input():
    with pytest.raises(ValidationError):
        tf.synthesize_instance(np.zeros((32, 48, 3)), tf.identity_sample(64))


def test_background_rendering_deterministic_and_in_range():
    a = tf.render_background(64, 1234)
    b = tf.render_background(64, 1234)
    c = tf.render_background(64, 1235)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.shape == (64, 64, 3)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_composite_leaves_background_outside_gate(canonical32):
    rng = substream(88, "gate")
    s = tf.sample_transform(tf.DistributionConfig(scale_range=(0.4, 0.6)), rng)
    plan = tf.WarpPlan(s, 32)
    background = tf.render_background(s.instance_side, s.background_id)
    composed = plan.compose_image(canonical32.astype(np.float64), background)
    off = plan.gate == 0.0
    assert off.any() and (~off).any()
    np.testing.assert_array_equal(composed[off], background[off])


# ---------------------------------------------------------------------------
# perturbation warp: linearity, zeros, adjoint


def random_triple(seed, canonical_side=32):
    rng = substream(seed, "triple")
    sample = tf.sample_transform(tf.DistributionConfig(), rng)
    mask = (rng.random((canonical_side, canonical_side)) < 0.3).astype(np.float32)
    delta = (rng.uniform(-1, 1, (canonical_side, canonical_side, 3)) * mask[..., None])
    return sample, mask, delta.astype(np.float32)


def test_warp_zero_maps_to_zero():
    sample, _, _ = random_triple(0)
    out = tf.warp_perturbation(np.zeros((32, 32, 3), np.float32), sample)
    assert out.shape == (32, 32, 3)
    np.testing.assert_array_equal(out, 0.0)


def test_warp_superposition():
    for seed in range(50):
        sample, _, da = random_triple(seed)
        _, _, db = random_triple(seed + 1000)
        lhs = tf.warp_perturbation(da + 2.0 * db, sample)
        rhs = tf.warp_perturbation(da, sample) + 2.0 * tf.warp_perturbation(db, sample)
        assert np.abs(lhs - rhs).max() <= 1e-5


def test_adjoint_pairing_identity():
    rng = substream(404, "pairing")
    for seed in range(50):
        sample, _, delta = random_triple(seed)
        upstream = rng.standard_normal((tf.MODEL_SIDE, tf.MODEL_SIDE, 3))
        fwd = tf.warp_perturbation(delta, sample)
        back = tf.warp_perturbation_adjoint(upstream, sample, 32)
        lhs = float(np.sum(fwd.astype(np.float64) * upstream))
        rhs = float(np.sum(delta.astype(np.float64) * back))
        assert oracles.rel_err(lhs, rhs) <= 1e-4


def test_warp_off_sign_pixels_receive_nothing():
    # The zero-padded gather must not leak perturbation onto model pixels
    # whose preimage lies off the sign plane: warping an all-ones field and
    # an all-ones field plus noise outside the support must agree.
    sample, _, _ = random_triple(7)
    ones = np.ones((32, 32, 3), np.float32)
    out = tf.warp_perturbation(ones, sample)
    assert out.min() >= -1e-9  # nonnegative input stays nonnegative
    assert out.max() <= 1.0 + 1e-6  # bilinear weights are a partition of unity


def test_warp_identity_chain_is_resize(canonical32):
    delta = canonical32 - 0.5
    up = np.repeat(np.repeat(delta, 2, axis=0), 2, axis=1)
    got = tf.warp_perturbation(up, tf.identity_sample(64))
    want = tf.crop_resize(up.astype(np.float64), (0, 0, 64, 64), 32)
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_warp_rejects_tiny_canonical():
    sample, _, _ = random_triple(3)
    with pytest.raises(ValidationError):
        tf.warp_perturbation(np.zeros((4, 4, 3), np.float32), sample)


def test_adjoint_rejects_bad_upstream_shape():
    sample, _, _ = random_triple(4)
    with pytest.raises(ValidationError):
        tf.warp_perturbation_adjoint(np.zeros((32, 32)), sample, 32)


def test_warp_bit_determinism():
    sample, _, delta = random_triple(12)
    a = tf.warp_perturbation(delta, sample)
    b = tf.warp_perturbation(delta, sample)
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------------------------
# crop_resize


def test_crop_resize_full_frame_identity():
    img = np.random.default_rng(90).random((40, 40, 3))
    out = tf.crop_resize(img, (0, 0, 40, 40), 40)
    np.testing.assert_array_equal(out, img)


def test_crop_resize_constant_image_stays_constant():
    img = np.full((64, 64, 3), 0.37)
    out = tf.crop_resize(img, (5, 9, 40, 30), 32)
    np.testing.assert_allclose(out, 0.37, atol=1e-12)


def test_crop_resize_rejects_out_of_bounds():
    img = np.zeros((32, 32, 3))
    with pytest.raises(ValidationError):
        tf.crop_resize(img, (0, 0, 40, 32), 16)
    with pytest.raises(ValidationError):
        tf.crop_resize(img, (30, 30, 0, 2), 16)


@given(seed=st.integers(0, 2**16))
@settings(max_examples=30, deadline=None)
def test_crop_resize_respects_value_bounds(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((48, 48, 3))
    x, y = int(rng.integers(0, 10)), int(rng.integers(0, 10))
    w, h = int(rng.integers(30, 38)), int(rng.integers(30, 38))
    out = tf.crop_resize(img, (x, y, w, h), 32)
    assert out.min() >= img.min() - 1e-9
    assert out.max() <= img.max() + 1e-9
