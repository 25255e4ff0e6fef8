import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from insalign.errors import (
    ConstantDirection,
    DegenerateDirections,
    Inconsistent,
    NormInfeasible,
    NotPerpendicular,
)
from insalign.lemmas import (
    lemma1_attitude,
    lemma2_point_from_spheres,
    lemma3_const_vector,
    lemma4_batch,
    lemma4_cross_with_norm,
)
from insalign.so3 import so3_exp

N_ROUND_TRIP = 10_000
vec3 = arrays(np.float64, 3, elements=st.floats(-10.0, 10.0))


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _well_spread(u, min_sv=0.05):
    """Reject direction sets whose sphere-difference system is badly conditioned."""
    d = u[1:] - u[0]
    s = np.linalg.svd(d, compute_uv=False)
    return s[-1] > min_sv * s[0]


# attitude from vector pairs

def test_lemma1_recovers_rotation(rng):
    for _ in range(200):
        c = so3_exp(rng.uniform(-np.pi, np.pi, 3))
        ua = rng.standard_normal((rng.integers(2, 6), 3))
        pairs = [(a, c @ a) for a in ua]
        np.testing.assert_allclose(lemma1_attitude(pairs), c, atol=1e-12)


def test_lemma1_weighted_least_squares(rng):
    c = so3_exp([0.3, -0.2, 0.9])
    ua = rng.standard_normal((10, 3))
    ub = ua @ c.T + 1e-3 * rng.standard_normal((10, 3))
    est = lemma1_attitude(list(zip(ua, ub)), weights=np.ones(10))
    # the optimum beats small perturbations of itself
    cost = lambda m: np.sum((ua @ m.T - ub) ** 2)
    for k in range(3):
        dv = np.zeros(3)
        dv[k] = 1e-4
        assert cost(est) <= cost(so3_exp(dv) @ est)


@pytest.mark.parametrize("pairs", [
    [(np.array([1.0, 0, 0]), np.array([1.0, 0, 0]))],
    [(np.array([1.0, 0, 0]), np.array([0, 1.0, 0])), (np.array([2.0, 0, 0]), np.array([0, 2.0, 0]))],
])
def test_lemma1_degenerate(pairs):
    with pytest.raises(DegenerateDirections):
        lemma1_attitude(pairs)


# common point of equal spheres

def _lemma2_cases(rng, n):
    out = []
    while len(out) < n:
        x = rng.uniform(-2, 2, 3)
        r = rng.uniform(0.1, 3.0)
        u = _unit(rng.standard_normal((rng.integers(4, 8), 3)))
        if _well_spread(u):
            out.append((x, r, x + r * u))
    return out


def test_lemma2_round_trip(rng):
    worst = 0.0
    for x, r, pts in _lemma2_cases(rng, N_ROUND_TRIP):
        sol = lemma2_point_from_spheres(pts, r)
        assert sol.unique and sol.rank == 3
        worst = max(worst, np.linalg.norm(sol.point - x) / max(1.0, np.linalg.norm(x), r))
    assert worst < 1e-10


def test_lemma2_coplanar_two_points(rng):
    for _ in range(200):
        x = rng.uniform(-2, 2, 3)
        r = rng.uniform(0.5, 2.0)
        n = _unit(rng.standard_normal(3))
        # three points on a circle of the sphere, in a plane at distance 0.3 r from x
        e1 = _unit(np.cross(n, rng.standard_normal(3)))
        e2 = np.cross(n, e1)
        rho = r * np.sqrt(1 - 0.09)
        ang = rng.uniform(0, 2 * np.pi, 3)
        pts = x + 0.3 * r * n + rho * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)
        sol = lemma2_point_from_spheres(pts, r)
        assert sol.rank == 2 and sol.kind == "two_points"
        for p in (sol.p1, sol.p2):
            np.testing.assert_allclose(np.linalg.norm(pts - p, axis=1), r, rtol=1e-9)
        assert min(np.linalg.norm(sol.p1 - x), np.linalg.norm(sol.p2 - x)) < 1e-9


def test_lemma2_two_points_circle_and_sphere():
    r = 1.0
    sol = lemma2_point_from_spheres([[1.0, 0, 0], [0, 1.0, 0]], r)
    assert sol.rank == 1 and sol.kind == "circle"
    np.testing.assert_allclose(sol.center, [0.5, 0.5, 0], atol=1e-15)
    assert sol.radius == pytest.approx(np.sqrt(0.5))
    sol = lemma2_point_from_spheres([[1.0, 2.0, 3.0]], r)
    assert sol.kind == "sphere" and sol.rank == 0


def test_lemma2_inconsistent():
    # equidistant from a common centre, but not at distance 1
    pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]]) * 2.0
    with pytest.raises(Inconsistent):
        lemma2_point_from_spheres(pts, 1.0)


def test_lemma2_far_points_raise():
    with pytest.raises(Inconsistent):
        lemma2_point_from_spheres([[5.0, 0, 0], [-5.0, 0, 0]], 1.0)


# constant vector from cross products

def test_lemma3_round_trip(rng):
    worst = 0.0
    for _ in range(N_ROUND_TRIP):
        m = rng.uniform(-5, 5, 3)
        a = rng.standard_normal((rng.integers(2, 6), 3))
        if np.linalg.norm(np.cross(a[0], a[1])) < 0.05 * np.linalg.norm(a[0]) * np.linalg.norm(a[1]):
            continue
        b = np.cross(a, m)
        est = lemma3_const_vector(list(zip(a, b)))
        worst = max(worst, np.linalg.norm(est - m) / max(1.0, np.linalg.norm(m)))
    assert worst < 1e-10


def test_lemma3_parallel_raises():
    a = np.array([[1.0, 2, 3], [2.0, 4, 6], [-1.0, -2, -3]])
    m = np.array([0.3, 0.1, -0.2])
    with pytest.raises(ConstantDirection):
        lemma3_const_vector(list(zip(a, np.cross(a, m))))


# cross product with known norm

def test_lemma4_round_trip(rng):
    worst = 0.0
    for _ in range(N_ROUND_TRIP):
        m = rng.uniform(-5, 5, 3)
        a = rng.standard_normal(3)
        b = np.cross(a, m)
        mp, mm = lemma4_cross_with_norm(a, b, np.linalg.norm(m))
        err = min(np.linalg.norm(mp - m), np.linalg.norm(mm - m)) / max(1.0, np.linalg.norm(m))
        worst = max(worst, err)
        # both candidates solve the forward problem
        for c in (mp, mm):
            np.testing.assert_allclose(np.cross(a, c), b, atol=1e-9 * max(1.0, np.linalg.norm(a) * np.linalg.norm(m)))
            assert np.linalg.norm(c) == pytest.approx(np.linalg.norm(m), rel=1e-9)
    assert worst < 1e-10


def test_lemma4_round_trip_well_posed(rng):
    worst = 0.0
    count = 0
    while count < N_ROUND_TRIP:
        m = rng.uniform(-5, 5, 3)
        a = rng.standard_normal(3)
        cos = abs(a @ m) / (np.linalg.norm(a) * np.linalg.norm(m))
        if cos < 0.1:
            continue
        count += 1
        mp, mm = lemma4_cross_with_norm(a, np.cross(a, m), np.linalg.norm(m))
        worst = max(worst, min(np.linalg.norm(mp - m), np.linalg.norm(mm - m)) / max(1.0, np.linalg.norm(m)))
    assert worst < 1e-10


def test_lemma4_separation_along_a(rng):
    a = rng.standard_normal(3)
    m = rng.standard_normal(3)
    mp, mm = lemma4_cross_with_norm(a, np.cross(a, m), np.linalg.norm(m))
    d = mp - mm
    assert np.linalg.norm(np.cross(d, a)) < 1e-12 * np.linalg.norm(d) * np.linalg.norm(a)
    # the two solutions are mirror images across the plane normal to a
    assert np.linalg.norm(d) == pytest.approx(2 * abs(a @ m) / np.linalg.norm(a), rel=1e-10)


def test_lemma4_collapse_when_perpendicular():
    a = np.array([0.0, 0.0, 2.0])
    m = np.array([1.0, -1.0, 0.0])
    mp, mm = lemma4_cross_with_norm(a, np.cross(a, m), np.linalg.norm(m))
    np.testing.assert_allclose(mp, m, atol=1e-7)
    np.testing.assert_allclose(mm, m, atol=1e-7)


def test_lemma4_infeasible_norm():
    a = np.array([1.0, 0, 0])
    b = np.array([0, 0, 2.0])
    with pytest.raises(NormInfeasible):
        lemma4_cross_with_norm(a, b, 1.0)


def test_lemma4_clamp_absorbs_roundoff():
    a = np.array([1.0, 0, 0])
    b = np.array([0, 0, 1.0 + 1e-14])
    mp, mm = lemma4_cross_with_norm(a, b, 1.0)
    np.testing.assert_array_equal(mp, mm)


def test_lemma4_not_perpendicular():
    with pytest.raises(NotPerpendicular):
        lemma4_cross_with_norm([1.0, 0, 0], [1.0, 1.0, 0], 2.0)


def test_lemma4_zero_a():
    with pytest.raises(ValueError):
        lemma4_cross_with_norm(np.zeros(3), np.zeros(3), 1.0)


def test_lemma4_batch_matches_scalar(rng):
    a = rng.standard_normal((50, 3))
    m = rng.standard_normal((50, 3))
    b = np.cross(a, m)
    norm = 1.7
    m = m / np.linalg.norm(m, axis=1, keepdims=True) * norm
    b = np.cross(a, m)
    mp, mm, ratio = lemma4_batch(a, b, norm)
    for i in range(50):
        sp, sm = lemma4_cross_with_norm(a[i], b[i], norm)
        np.testing.assert_allclose(mp[i], sp, atol=1e-12)
        np.testing.assert_allclose(mm[i], sm, atol=1e-12)
    cos = np.abs(np.einsum("ij,ij->i", a, m)) / (np.linalg.norm(a, axis=1) * norm)
    np.testing.assert_allclose(ratio, cos, atol=1e-7)


@given(vec3, vec3)
@settings(max_examples=200)
def test_lemma4_property_forward_consistency(a, m):
    assume(np.linalg.norm(a) > 1e-3 and np.linalg.norm(m) > 1e-3)
    b = np.cross(a, m)
    mp, mm = lemma4_cross_with_norm(a, b, np.linalg.norm(m))
    scale = np.linalg.norm(a) * np.linalg.norm(m)
    for c in (mp, mm):
        assert np.linalg.norm(np.cross(a, c) - b) <= 1e-9 * scale
    assert min(np.linalg.norm(mp - m), np.linalg.norm(mm - m)) <= 1e-6 * np.linalg.norm(m)


@given(vec3, st.floats(0.1, 5.0))
@settings(max_examples=200)
def test_lemma2_property_sphere_residual(x, r):
    u = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0], [-1.0, -1.0, -1.0] / np.sqrt(3)])
    sol = lemma2_point_from_spheres(x + r * u, r)
    np.testing.assert_allclose(sol.point, x, atol=1e-10 * max(1.0, np.linalg.norm(x)))
