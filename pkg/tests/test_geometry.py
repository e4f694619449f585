import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skorohod_lab.geometry import (Ball, Box, DimensionError, HalfLine, HalfSpace,
                                   NotOnBoundaryError, Polytope, Profile, Tube, classify,
                                   inward_normal, NormalVector, project, saisho_constants,
                                   verify_condition_A, verify_condition_B, verify_normal)

coord = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def unit_square():
    A = np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]])
    b = np.array([1.0, 0, 1, 0])
    return Polytope(A, b)


def tube(d=2):
    return Tube(Profile.linear(1.0), d)


@pytest.mark.parametrize("domain, x, expected", [
    (HalfLine(), [0.5], "interior"),
    (Ball(radius=1.0, dimension=2), [1.0, 0.0], "boundary"),
    (HalfLine(), [-0.1], "exterior"),
    (Box([0, 0], [1, 1]), [1.0, 0.3], "boundary"),
    (tube(), [0.0, 1.0], "boundary"),
    (tube(), [0.0, 0.0], "interior"),
    (tube(), [0.0, 1.5], "exterior"),
])
def test_classify(domain, x, expected):
    assert classify(domain, x, 1e-9) == expected


def test_classify_rejects_dimension_mismatch():
    with pytest.raises(DimensionError):
        classify(Ball(dimension=2), [1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        classify(HalfLine(), [1.0], tol=0.0)


@pytest.mark.parametrize("domain, x, point, dist", [
    (Ball(radius=1.0, dimension=2), [2.0, 0.0], [1.0, 0.0], 1.0),
    (HalfSpace([1.0, 0.0]), [-3.0, 5.0], [0.0, 5.0], 3.0),
    (Box([0, 0], [1, 1]), [2.0, -1.0], [1.0, 0.0], math.sqrt(2)),
    (unit_square(), [2.0, -1.0], [1.0, 0.0], math.sqrt(2)),
    (unit_square(), [0.5, 3.0], [0.5, 1.0], 2.0),
])
def test_project_closed_forms(domain, x, point, dist):
    p, d = project(domain, x)
    np.testing.assert_allclose(p, point, atol=1e-9)
    assert d == pytest.approx(dist, abs=1e-9)


def test_tube_projection_matches_brute_force():
    dom = tube()
    x = np.array([0.0, 2.0])
    p, d = dom.project(x)
    # oracle: dense sampling of both boundary branches and the apex segment
    s = np.linspace(-1.0, 5.0, 1_000_001)
    upper = np.column_stack([s, s + 1.0])
    lower = np.column_stack([s, -(s + 1.0)])
    cand = np.vstack([upper, lower])
    dists = np.linalg.norm(cand - x, axis=1)
    k = np.argmin(dists)
    assert d == pytest.approx(dists[k], abs=1e-9)
    np.testing.assert_allclose(p, cand[k], atol=1e-5)
    np.testing.assert_allclose(p, [0.5, 1.5], atol=1e-9)


@pytest.mark.parametrize("domain, x, n", [
    (HalfLine(), [0.0], [1.0]),
    (Ball(radius=1.0, dimension=2), [0.0, 1.0], [0.0, -1.0]),
    (tube(3), [0.0, 1.0, 0.0], [1 / math.sqrt(2), -1 / math.sqrt(2), 0.0]),
    (HalfSpace([0.0, 1.0], 2.0), [7.0, 2.0], [0.0, 1.0]),
])
def test_inward_normal(domain, x, n):
    nv = inward_normal(domain, x)
    assert nv.unique
    np.testing.assert_allclose(nv.direction, n, atol=1e-12)
    assert np.linalg.norm(nv.direction) == pytest.approx(1.0)
    assert verify_normal(domain, nv, domain.meta_r0 or 1.0, 500, seed=1).passed


def test_inward_normal_flags_corner_cone():
    nv = inward_normal(Box([0, 0], [1, 1]), [0.0, 0.0])
    assert not nv.unique
    assert len(nv.rays) == 2
    np.testing.assert_allclose(nv.direction, [1 / math.sqrt(2)] * 2)


def test_inward_normal_rejects_interior_point():
    with pytest.raises(NotOnBoundaryError):
        inward_normal(Ball(dimension=2), [0.2, 0.1])


def test_verify_normal_half_space_margin_zero():
    rep = verify_normal(HalfSpace([1.0, 0.0]), NormalVector([0.0, 0.0], [1.0, 0.0], 1.0), 1.0,
                        2000, seed=0)
    assert rep.passed
    assert rep.summary["worst_margin"] == pytest.approx(0.0, abs=1e-12)


def test_verify_normal_ball():
    ball = Ball(radius=1.0, dimension=2)
    good = NormalVector([1.0, 0.0], [-1.0, 0.0], 0.5)
    bad = NormalVector([1.0, 0.0], [1.0, 0.0], 0.5)
    assert verify_normal(ball, good, 0.5, 4000, seed=0).passed
    rep = verify_normal(ball, bad, 0.5, 4000, seed=0)
    assert not rep.passed
    # a point just inside along the axis is a valid falsifier: -0.1 + 0.01 < 0
    assert verify_normal(ball, bad, 0.5, ys=[[0.9, 0.0]]).summary["worst_margin"] == \
        pytest.approx(-0.09)
    assert rep.witnesses[0]["margin"] < 0


@pytest.mark.parametrize("domain, r0", [
    (Ball(radius=1.0, dimension=2), 1.0),
    (unit_square(), 10.0),
    (Box([0, 0, 0], [1, 2, 3]), 5.0),
    (HalfSpace([1.0, 1.0]), 3.0),
])
def test_condition_A_convex(domain, r0):
    rep = verify_condition_A(domain, r0, boundary_samples=60, probe_samples=200, seed=3)
    assert rep.passed, rep.witnesses
    assert rep.notes


def test_condition_A_tube_fails_for_huge_radius():
    # |x2| <= (x1+1)^2 is not convex, so a huge exterior-ball radius must fail
    dom = Tube(Profile.from_expression("pow(s+1, 2)", "2*(s+1)", "2"), 2, window=3.0)
    rep = verify_condition_A(dom, 1e6, boundary_samples=80, probe_samples=400, seed=0)
    assert not rep.passed
    assert rep.witnesses[0]["margin"] < 0


@pytest.mark.parametrize("domain, delta, beta", [
    (HalfSpace([1.0, 0.0]), 0.5, 1.0),
    (unit_square(), 0.1, math.sqrt(2)),
    (Ball(radius=1.0, dimension=2), 0.1, 1.01),
])
def test_condition_B(domain, delta, beta):
    rep = verify_condition_B(domain, delta, beta, boundary_samples=40, seed=0)
    assert rep.passed, rep.witnesses


def test_condition_B_half_space_direction_is_normal():
    rep = verify_condition_B(HalfSpace([1.0, 0.0]), 1.0, 1.0, boundary_samples=10, seed=0)
    assert rep.summary["worst_inner_product"] == pytest.approx(1.0)
    np.testing.assert_allclose(rep.witnesses[0]["l_x"], [1.0, 0.0])


def test_condition_B_square_corner_inner_product():
    rep = verify_condition_B(unit_square(), 0.1, math.sqrt(2), boundary_samples=20, seed=0)
    assert rep.summary["worst_inner_product"] == pytest.approx(1 / math.sqrt(2), abs=1e-9)
    assert not verify_condition_B(unit_square(), 0.1, 1.3, boundary_samples=20, seed=0).passed


@pytest.mark.parametrize("theta, c1_over_e2", [(1.0, 624.0), (0.5, 6960.0)])
def test_saisho_constants(theta, c1_over_e2):
    c1, c2 = saisho_constants(theta, 1.0, 1.0, 1.0)
    assert c1 / math.e ** 2 == pytest.approx(c1_over_e2, rel=1e-14)
    assert c2 == 2.0


def test_saisho_values_frozen():
    assert saisho_constants(1.0, 1, 1, 1)[0] == pytest.approx(4610.7710, abs=1e-4)
    assert saisho_constants(0.5, 1, 1, 1)[0] == pytest.approx(51427.8304, abs=1e-4)


@pytest.mark.parametrize("args", [(0.0, 1, 1, 1), (1.5, 1, 1, 1), (1, 0, 1, 1), (1, 1, 0.5, 1),
                                  (1, 1, 1, -1)])
def test_saisho_rejects_bad_input(args):
    with pytest.raises(ValueError):
        saisho_constants(*args)


@given(st.floats(0.05, 1.0), st.floats(0.1, 5), st.floats(0.1, 5),
       st.floats(1.0, 5.0), st.floats(0.0, 3.0))
def test_saisho_monotone_in_beta(theta, r0, delta, beta, bump):
    a = saisho_constants(theta, r0, beta, delta)
    b = saisho_constants(theta, r0, beta + bump, delta)
    assert b[0] >= a[0] and b[1] >= a[1]
    assert saisho_constants(1.0, r0, beta, delta)[1] == a[1]


CONVEX = [HalfLine(), HalfSpace([1.0, -2.0], 0.3), Box([-1, 0], [2, 1]),
          Ball([0.5, -0.5], 2.0, 2), unit_square()]


@pytest.mark.parametrize("domain", CONVEX, ids=lambda d: d.name)
@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_projection_idempotent_and_nearest(domain, data):
    x = np.array(data.draw(st.lists(coord, min_size=domain.dimension,
                                    max_size=domain.dimension)))
    p, d = domain.project(x)
    assert domain.contains(p)
    q, d2 = domain.project(p)
    np.testing.assert_allclose(q, p, rtol=1e-12, atol=1e-12)
    assert d2 <= 1e-12 * (1 + np.linalg.norm(p))
    ys = domain.sample_closure(2000, np.random.default_rng(0), center=x,
                               radius=max(2 * d, 1.0))
    assert np.all(np.linalg.norm(ys - x, axis=1) >= d - 1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 6), st.floats(-8, 8))
def test_tube_projection_nearest_within_tolerance(a, b):
    dom = tube()
    x = np.array([a, b])
    p, d = dom.project(x)
    assert dom.contains(p, tol=1e-9)
    ys = dom.sample_closure(4000, np.random.default_rng(1), center=x, radius=max(2 * d, 1.0))
    assert np.all(np.linalg.norm(ys - x, axis=1) >= d - 1e-7)


@pytest.mark.parametrize("domain", CONVEX, ids=lambda d: d.name)
def test_convex_normals_satisfy_exterior_ball(domain):
    pts = domain.boundary_sampler(25, seed=2)
    for x in pts:
        nv = inward_normal(domain, x)
        for r in (0.1, 1.0, 100.0):
            assert verify_normal(domain, nv, r, 400, seed=5, tol=1e-9).passed


def test_boundary_sampler_is_deterministic_and_on_boundary():
    dom = unit_square()
    a = dom.boundary_sampler(50, seed=4)
    b = dom.boundary_sampler(50, seed=4)
    np.testing.assert_array_equal(a, b)
    assert np.all(dom.boundary_distance(a) < 1e-12)
