"""Homography estimation and polygon helpers against an SVD oracle."""

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from signadv import geometry
from signadv.errors import ValidationError

from . import oracles

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def random_convex_quad(rng, spread=0.35):
    # Perturb the unit square corners; reject non-convex draws.
    while True:
        quad = UNIT_SQUARE + rng.uniform(-spread, spread, size=(4, 2))
        if geometry.is_strictly_convex(quad):
            return quad


def test_identity_from_matching_points():
    H = geometry.homography_from_points(UNIT_SQUARE, UNIT_SQUARE)
    np.testing.assert_allclose(H, np.eye(3), atol=1e-12)


def test_maps_all_four_correspondences_exactly():
    rng = np.random.default_rng(60)
    src = random_convex_quad(rng)
    dst = random_convex_quad(rng)
    H = geometry.homography_from_points(src, dst)
    np.testing.assert_allclose(geometry.apply_homography(H, src), dst, atol=1e-9)


def test_matches_svd_oracle_on_random_quads():
    rng = np.random.default_rng(61)
    for _ in range(50):
        src = random_convex_quad(rng)
        dst = random_convex_quad(rng)
        H = geometry.homography_from_points(src, dst)
        H_ref = oracles.homography_svd(src, dst)
        np.testing.assert_allclose(H, H_ref, rtol=1e-7, atol=1e-9)
        # And both agree on interior points, not just the fitted corners.
        pts = rng.uniform(0.2, 0.8, size=(10, 2))
        np.testing.assert_allclose(
            geometry.apply_homography(H, pts), oracles.apply_h(H_ref, pts), atol=1e-8
        )


def test_normalization_bottom_right_is_one():
    rng = np.random.default_rng(62)
    H = geometry.homography_from_points(random_convex_quad(rng), random_convex_quad(rng))
    assert H[2, 2] == 1.0


def test_inverse_round_trip():
    rng = np.random.default_rng(63)
    src, dst = random_convex_quad(rng), random_convex_quad(rng)
    H = geometry.homography_from_points(src, dst)
    Hinv = geometry.invert_homography(H)
    np.testing.assert_allclose(geometry.apply_homography(Hinv, dst), src, atol=1e-9)
    assert Hinv[2, 2] == pytest.approx(1.0)


def test_rejects_collinear_source():
    src = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    with pytest.raises(ValidationError):
        geometry.homography_from_points(src, UNIT_SQUARE)


def test_rejects_wrong_point_count():
    with pytest.raises(ValidationError):
        geometry.homography_from_points(UNIT_SQUARE[:3], UNIT_SQUARE[:3])


@given(seed=st.integers(0, 2**16))
@settings(max_examples=50, deadline=None)
def test_composition_property(seed):
    # H2 @ H1 acting on points equals applying H1 then H2.
    rng = np.random.default_rng(seed)
    a, b, c = (random_convex_quad(rng, 0.25) for _ in range(3))
    H1 = geometry.homography_from_points(a, b)
    H2 = geometry.homography_from_points(b, c)
    pts = rng.uniform(0.1, 0.9, size=(6, 2))
    one_hop = geometry.apply_homography(H2, geometry.apply_homography(H1, pts))
    direct = geometry.apply_homography(H2 @ H1, pts)
    np.testing.assert_allclose(one_hop, direct, atol=1e-8)


def test_polygon_area_known_values():
    assert geometry.polygon_area(UNIT_SQUARE) == pytest.approx(1.0)
    tri = np.array([[0, 0], [4, 0], [0, 3]])
    assert geometry.polygon_area(tri) == pytest.approx(6.0)
    # Orientation must not flip the sign.
    assert geometry.polygon_area(UNIT_SQUARE[::-1]) == pytest.approx(1.0)


def test_clip_polygon_inside_is_identity():
    got = geometry.clip_polygon_to_rect(UNIT_SQUARE, -1, -1, 2, 2)
    assert geometry.polygon_area(got) == pytest.approx(1.0)


def test_clip_polygon_partial_overlap_area():
    # Unit square clipped to its right half.
    got = geometry.clip_polygon_to_rect(UNIT_SQUARE, 0.5, 0.0, 2.0, 1.0)
    assert geometry.polygon_area(got) == pytest.approx(0.5)


def test_clip_polygon_disjoint_is_empty():
    got = geometry.clip_polygon_to_rect(UNIT_SQUARE, 5, 5, 6, 6)
    assert got.shape == (0, 2)


@given(
    seed=st.integers(0, 2**16),
    x0=st.floats(-0.5, 0.4),
    y0=st.floats(-0.5, 0.4),
    w=st.floats(0.2, 1.5),
    h=st.floats(0.2, 1.5),
)
@settings(max_examples=60, deadline=None)
def test_clip_area_never_exceeds_either_input(seed, x0, y0, w, h):
    rng = np.random.default_rng(seed)
    quad = random_convex_quad(rng, 0.3)
    clipped = geometry.clip_polygon_to_rect(quad, x0, y0, x0 + w, y0 + h)
    if len(clipped) == 0:
        return
    area = geometry.polygon_area(clipped)
    assert area <= geometry.polygon_area(quad) + 1e-9
    assert area <= w * h + 1e-9


def test_is_strictly_convex():
    assert geometry.is_strictly_convex(UNIT_SQUARE)
    assert geometry.is_strictly_convex(UNIT_SQUARE[::-1])  # either orientation
    bowtie = np.array([[0, 0], [1, 1], [1, 0], [0, 1]])
    assert not geometry.is_strictly_convex(bowtie)
    collinear = np.array([[0, 0], [0.5, 0], [1, 0], [0, 1]])
    assert not geometry.is_strictly_convex(collinear)


@given(seed=st.integers(0, 2**16), shrink=st.floats(0.05, 0.45))
@settings(max_examples=40, deadline=None)
def test_projected_interior_point_stays_interior(seed, shrink):
    # A homography maps the quad interior to the image quad interior; the
    # centroid pushed toward each corner must land inside the destination.
    rng = np.random.default_rng(seed)
    src, dst = random_convex_quad(rng, 0.25), random_convex_quad(rng, 0.25)
    H = geometry.homography_from_points(src, dst)
    centroid = src.mean(axis=0, keepdims=True)
    inner = centroid + (src - centroid) * (1 - shrink)
    proj = geometry.apply_homography(H, inner)
    assume(geometry.is_strictly_convex(proj))
    hull_area = geometry.polygon_area(dst)
    assert geometry.polygon_area(proj) < hull_area + 1e-9
