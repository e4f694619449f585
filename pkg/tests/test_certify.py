import math

import numpy as np
import pytest

from skorohod_lab.certify import (CoveringSpec, LyapunovCertificate, check_covering, check_V1,
                                  check_V2, check_V3, covering_preset, excursion_diagnostic,
                                  greedy_cover, preset_example_2_1)
from skorohod_lab.coefficients import GrowthGamma, from_expressions, make_preset
from skorohod_lab.geometry import Ball, HalfLine, HalfSpace
from skorohod_lab.sde import brownian, simulate
from skorohod_lab.skorohod import ReflectedSolution, SampledPath


def quadratic(x0=None):
    c = 0.0 if x0 is None else np.asarray(x0, float)
    return LyapunovCertificate(lambda t, X: np.sum((X - c) ** 2, axis=1),
                               lambda t, X: 2.0 * (X - c),
                               lambda t, X: np.full(len(X), 2.0 * X.shape[1]))


def test_V1_infima_of_squared_norm():
    rep = check_V1(quadratic(), HalfSpace([1.0, 0.0], -1.0), 1.0, (1, 2, 4, 8), 2000,
                   escape_threshold=50.0)
    assert rep.passed
    np.testing.assert_allclose(rep.summary["shell_infima"], [1, 4, 16, 64], rtol=1e-12)


def test_V1_flat_function_fails():
    flat = LyapunovCertificate(lambda t, X: np.full(len(X), 5.0))
    rep = check_V1(flat, HalfSpace([1.0, 0.0]), 1.0, (1, 2, 4, 8), 500)
    assert not rep.passed
    assert not rep.summary["strictly_increasing"]


def test_V2_convex_domain_and_constant():
    dom = HalfSpace([1.0, 1.0], -0.5)
    rep = check_V2(quadratic([1.0, 2.0]), dom, 2000, seed=1)
    assert rep.passed and rep.summary["max_inner_product"] <= 0
    const = LyapunovCertificate(lambda t, X: np.full(len(X), 3.0))
    rep = check_V2(const, Ball(dimension=2), 500)
    assert rep.passed and rep.summary["max_inner_product"] == pytest.approx(0.0, abs=1e-6)
    # centre outside the domain: gradient points outward somewhere
    assert not check_V2(quadratic([-5.0, -5.0]), dom, 500).passed


@pytest.mark.parametrize("d", [1, 2, 3])
def test_V3_constant_laplacian(d):
    # unit Hilbert-Schmidt norm: sigma = I / sqrt(d), so lhs = 1 * lap|x|^2 = 2d
    dom = HalfSpace(np.eye(d)[0], -1.0)
    cf = from_expressions(d, ["0"] * d, repr(1 / math.sqrt(d)))
    G = GrowthGamma("linear")
    assert check_V3(quadratic(), cf, G, 2 * d, dom, 1.0, 5000).passed
    rep = check_V3(quadratic(), cf, G, 2 * d - 0.1, dom, 1.0, 5000)
    assert not rep.passed
    assert rep.witnesses[0]["lhs"] == pytest.approx(2 * d)


@pytest.mark.parametrize("d", [2, 3])
def test_V3_identity_sigma_uses_hilbert_schmidt_norm(d):
    # ||I||^2 = d, so the brownian preset needs g = 2 d^2
    dom = HalfSpace(np.eye(d)[0], -1.0)
    cf, G = make_preset("brownian", d), GrowthGamma("linear")
    assert check_V3(quadratic(), cf, G, 2 * d * d, dom, 1.0, 2000).passed
    assert not check_V3(quadratic(), cf, G, 2 * d, dom, 1.0, 2000).passed


def test_V3_time_derivative_cancels():
    # dV/dt = -g gamma(V) / 2 with sigma = b = 0: the generator side equals -g gamma(V)
    g = 1.0
    cert = LyapunovCertificate(
        lambda t, X: (np.sum(X * X, axis=1) + 2.0) * math.exp(-g * t / 2) - 1.0,
        dtV=lambda t, X: -0.5 * g * (np.sum(X * X, axis=1) + 2.0) * math.exp(-g * t / 2))
    rep = check_V3(cert, make_preset("zero", 2), GrowthGamma("linear"), g,
                   HalfSpace([1.0, 0.0]), 0.5, 2000, radius=10.0)
    assert rep.passed
    w = rep.witnesses[0]
    assert w["lhs"] + w["rhs"] == pytest.approx(0.0, abs=1e-9)


def test_finite_difference_fallbacks_match_analytic():
    full = quadratic([0.5, -1.0])
    fd = LyapunovCertificate(full.V)
    X = np.random.default_rng(0).standard_normal((20, 2)) * 3
    np.testing.assert_allclose(fd.grad(0.0, X), full.grad(0.0, X), rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(fd.lap(0.0, X), full.lap(0.0, X), rtol=1e-3)
    np.testing.assert_allclose(fd.time_derivative(0.3, X), 0.0, atol=1e-9)


def test_tube_preset_certificate_closed_forms():
    domain, cert, G, g = preset_example_2_1("tube", m=4, M=0)
    X = np.array([[0.0, 0.3], [2.0, -1.0], [-1.0, 0.0]])
    np.testing.assert_allclose(cert.value(0, X), 0.5 * (X[:, 0] + 1) ** 2 + 2 * X[:, 1] ** 2)
    np.testing.assert_allclose(cert.grad(0, [[0.0, 0.3]]), [[1.0, 1.2]])
    np.testing.assert_allclose(cert.lap(0, X), 1.0 + 4.0)
    assert G.label == "slog" and g > 0
    fd = LyapunovCertificate(cert.V)
    np.testing.assert_allclose(fd.grad(0, X), cert.grad(0, X), rtol=1e-6, atol=1e-8)


def test_convex_preset_is_squared_norm():
    preset = preset_example_2_1("convex")
    domain, cert, G, g = preset
    X = np.array([[1.0, 2.0], [-1.0, 0.0]])
    np.testing.assert_allclose(cert.value(0, X), [5.0, 1.0])
    assert g == 20.0
    assert domain.contains([-1.0, 7.0]) and not domain.contains([-1.1, 0.0], tol=0.0)
    with pytest.raises(ValueError):
        preset_example_2_1("nope")


def test_tube_preset_rejects_bad_m():
    with pytest.raises(ValueError):
        preset_example_2_1("tube", m=1.0)


def test_tube_preset_small_scale_checks():
    domain, cert, G, g = preset_example_2_1("tube")
    v1 = check_V1(cert, domain, 1.0, samples_per_shell=500)
    inf = v1.summary["shell_infima"]
    assert v1.passed and all(b > a for a, b in zip(inf, inf[1:]))
    assert check_V2(cert, domain, 1000).passed
    cf = make_preset("loglinear", 2)
    assert check_V3(cert, cf, G, g, domain, 1.0, 5000).passed


def test_greedy_cover_covers_points():
    pts = np.column_stack([np.zeros(200), np.linspace(-5, 5, 200)])
    centers, radii = greedy_cover(pts, lambda P: np.full(len(P), 1.0), 0.5)
    dist = np.linalg.norm(pts[:, None] - centers[None], axis=2).min(axis=1)
    assert np.all(dist < 0.5 * 0.5)
    assert np.all(radii == 1.0)


def test_covering_spec_validation():
    with pytest.raises(ValueError):
        CoveringSpec([[0.0]], [0.5], 1.0, 0.5, 0.0, 1.0, 1.0)  # radius below delta_hat
    with pytest.raises(ValueError):
        CoveringSpec([[0.0]], [1.0], 1.0, 1.5, 0.0, 1.0, 1.0)


@pytest.mark.parametrize("case", ["bounded", "sublinear"])
def test_covering_presets_pass(case):
    spec, cf, domain = covering_preset(case, window=5.0, cover_samples=4000)
    rep = check_covering(spec, cf, domain, samples=400, boundary_samples=2000)
    assert rep.passed, rep.witnesses
    assert rep.summary["max_M_over_bound"] <= 1.0
    if case == "sublinear":
        assert spec.nu == 0.5 and spec.beta_hat == 0.5


def test_sublinear_M_matches_closed_form():
    spec, cf, domain = covering_preset("sublinear", window=5.0, cover_samples=4000)
    i = int(np.argmax(np.linalg.norm(spec.centers, axis=1)))
    one = CoveringSpec(spec.centers[i:i + 1], spec.radii[i:i + 1], 1.0, 0.5, spec.nu, 1e9, 1.0,
                       window=0.0)
    rep = check_covering(one, cf, domain, samples=20000)
    r = np.linalg.norm(spec.centers[i])
    exact = ((r + spec.radii[i]) ** 0.25 + 1.0) ** 2  # sup of C^2(|z|^p + 1)^2, C = 1
    M = rep.summary["max_M_over_bound"] * 1e9 * spec.radii[i] ** spec.nu
    assert M <= exact * (1 + 1e-9)
    assert M >= 0.999 * exact


def test_covering_injected_gap_has_witness():
    spec, cf, domain = covering_preset("bounded", window=5.0, cover_samples=4000)
    rep = check_covering(spec, cf, domain, samples=200, boundary_samples=500,
                         probes=[[0.0, 500.0]])
    assert not rep.passed
    assert rep.summary["uncovered"] == 1
    np.testing.assert_array_equal(rep.witnesses[-1]["uncovered_point"], [0.0, 500.0])


def test_covering_M_failure():
    spec, cf, domain = covering_preset("bounded", window=3.0, cover_samples=2000)
    spec.C = 0.5
    rep = check_covering(spec, cf, domain, samples=200)
    assert not rep.passed and rep.summary["M_violations"] > 0


def grid_solution(values):
    v = np.asarray(values, float)[:, None]
    path = SampledPath.uniform(v, 0.1)
    return ReflectedSolution(path, SampledPath.uniform(np.zeros_like(v), 0.1),
                             np.zeros(len(v)))


ONE_BALL = CoveringSpec([[0.0]], [0.5], 0.5, 0.5, 0.0, 1.0, 1.0)


def test_excursions_interior_only_path():
    rep = excursion_diagnostic(grid_solution([2.0, 2.5, 3.0, 2.2]), ONE_BALL)
    assert rep.summary["sigma_count"] == 0
    assert rep.summary["n_k"] == [0, "inf"]


def test_excursions_bookkeeping():
    # U_1 = B(0, 0.25), V_1 = B(0, 0.5); U_0 = {|x| > 0.125}, V_0 = {|x| > 1/12}
    rep = excursion_diagnostic(grid_solution([0.0, 0.1, 0.6, 0.7, 0.05, 0.2, 0.3]), ONE_BALL)
    s = rep.summary
    assert s["n_k"] == [1, 0, 1, "inf"]
    assert s["tau_k"] == pytest.approx([0.0, 0.2, 0.4, 0.6])
    # the last ball visit runs into the end of the grid and is excluded
    assert s["sigma_count"] == 1


def test_excursions_end_inside_ball_excluded():
    rep = excursion_diagnostic(grid_solution([0.0, 0.1, 0.2, 0.0]), ONE_BALL)
    assert rep.summary["sigma_count"] == 0


def test_excursions_on_reflected_brownian_path():
    sol, _ = simulate(HalfLine(), make_preset("brownian", 1), [0.0], brownian(0, 1, 1.0, 1e-3))
    rep = excursion_diagnostic(sol, ONE_BALL, HalfLine())
    assert rep.passed
    assert 0 <= rep.summary["sigma_count"] < len(rep.summary["tau_k"])
