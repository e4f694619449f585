import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from skorohod_lab.geometry import Ball, HalfLine, HalfSpace, saisho_constants
from skorohod_lab.skorohod import (EmptyWindowError, SampledPath, WindowTooLargeError,
                                   check_variation_bound, dyadic_functionals, dyadic_windows,
                                   holder_norm, oscillation, read_path_csv, solve_1d,
                                   solve_discrete, solve_discrete_batch, total_variation, verify_solution,
                                   write_path_csv)

GRID5 = np.linspace(0.0, 1.0, 5)


def scalar(values, grid=None):
    values = np.asarray(values, float)
    grid = np.linspace(0.0, 1.0, len(values)) if grid is None else grid
    return SampledPath(grid, values[:, None])


def random_walk(seed, n=1024, start=0.0):
    rng = np.random.default_rng(seed)
    v = start + np.concatenate([[0.0], np.cumsum(rng.standard_normal(n) / np.sqrt(n))])
    return scalar(v)


@pytest.mark.parametrize("w, xi, phi", [
    (GRID5, GRID5, np.zeros(5)),
    (1 - 2 * GRID5, [1, 0.5, 0, 0, 0], [0, 0, 0, 0.5, 1]),
    (-GRID5, np.zeros(5), GRID5),
])
def test_solve_1d_fixtures(w, xi, phi):
    x, p = solve_1d(scalar(w))
    np.testing.assert_allclose(x.values[:, 0], xi, atol=1e-15)
    np.testing.assert_allclose(p.values[:, 0], phi, atol=1e-15)


def test_solve_1d_rejects_negative_start():
    with pytest.raises(ValueError):
        solve_1d(scalar([-0.1, 0.0]))


def test_sampled_path_validation():
    with pytest.raises(ValueError):
        SampledPath([0.0, 0.0], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        SampledPath([0.0, 1.0], [[1.0]])
    p = SampledPath.uniform(np.zeros((11, 2)), 0.1)
    assert p.dimension == 2 and len(p) == 11
    assert p.index_of(0.34) == 3


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.integers(2, 200), elements=st.floats(-3, 3)), st.floats(0, 2))
def test_discrete_scheme_equals_1d_formula(steps, start):
    w = scalar(start + np.concatenate([[0.0], np.cumsum(steps)])[:len(steps)])
    xi, phi = solve_1d(w)
    sol = solve_discrete(HalfLine(), w)
    np.testing.assert_allclose(sol.X.values, xi.values, rtol=0, atol=1e-12)
    np.testing.assert_allclose(sol.Phi.values, phi.values, rtol=0, atol=1e-12)
    assert np.all(xi.values >= 0)
    assert np.all(np.diff(phi.values[:, 0]) >= 0)
    # phi grows only where xi sits on zero
    grows = np.diff(phi.values[:, 0]) > 0
    assert np.all(xi.values[1:, 0][grows] == 0)


@settings(max_examples=60, deadline=None)
@given(arrays(float, 64, elements=st.floats(-2, 2)),
       arrays(float, 64, elements=st.floats(0, 2)))
def test_monotone_loading(steps, bump):
    v = np.concatenate([[0.0], np.cumsum(steps)])
    u_any = v + np.concatenate([[0.0], bump])
    u_rising = v + np.concatenate([[0.0], np.cumsum(bump)])
    _, pv = solve_1d(scalar(v))
    _, pu = solve_1d(scalar(u_any))
    xv, _ = solve_1d(scalar(v))
    xr, _ = solve_1d(scalar(u_rising))
    # larger drivers need less pushing; a nondecreasing lift raises the path
    assert np.all(pu.values <= pv.values + 1e-12)
    assert np.all(xr.values >= xv.values - 1e-12)


def test_pointwise_larger_driver_can_give_lower_path():
    xv, _ = solve_1d(scalar([0.0, -1.0, 0.0]))
    xu, _ = solve_1d(scalar([0.0, 0.0, 0.0]))
    assert xv.values[2, 0] == 1.0 and xu.values[2, 0] == 0.0


def test_solve_discrete_examples():
    ball = Ball(dimension=2)
    w = SampledPath(GRID5, np.tile([0.3, 0.2], (5, 1)))
    sol = solve_discrete(ball, w)
    np.testing.assert_array_equal(sol.X.values, w.values)
    assert not sol.Phi.values.any()

    hs = HalfSpace([1.0, 0.0])
    sol = solve_discrete(hs, SampledPath([0.0, 1.0], [[0.0, 0.0], [-1.0, 1.0]]))
    np.testing.assert_allclose(sol.X.values, [[0, 0], [0, 1]])
    np.testing.assert_allclose(np.diff(sol.Phi.values, axis=0), [[1, 0]])
    assert sol.total_variation[-1] == 1.0
    sol.check_invariants(hs)


def test_solve_discrete_checks_inputs():
    with pytest.raises(ValueError):
        solve_discrete(Ball(dimension=2), scalar([0.0, 1.0]))
    with pytest.raises(ValueError):
        solve_discrete(HalfLine(), scalar([-1.0, 1.0]))


def test_verify_solution_vacuous_and_half_line():
    interior = solve_discrete(Ball(dimension=2),
                              SampledPath(GRID5, 0.1 * np.column_stack([GRID5, GRID5])))
    rep = verify_solution(interior, Ball(dimension=2))
    assert rep.passed and rep.summary["reflection_steps"] == 0
    assert "vacuous" in rep.notes[0]

    sol = solve_discrete(HalfLine(), random_walk(3))
    rep = verify_solution(sol, HalfLine(), r0=1.0)
    assert rep.passed
    steps = np.nonzero(np.diff(sol.Phi.values[:, 0]) > 0)[0]
    assert rep.summary["reflection_steps"] == len(steps) > 0
    assert np.all(sol.X.values[steps + 1, 0] == 0)


def test_verify_solution_flags_bad_reflection():
    sol = solve_discrete(HalfLine(), random_walk(3))
    sol.Phi.values[:] = -sol.Phi.values  # push outward instead of inward
    rep = verify_solution(sol, HalfLine(), r0=1.0)
    assert not rep.passed
    assert rep.summary["normal_violations"] > 0
    assert rep.witnesses


def test_ball_reflection_valid():
    rng = np.random.default_rng(0)
    W = np.concatenate([[[0.0, 0.0]], np.cumsum(rng.normal(0, 0.03, (3000, 2)), axis=0)])
    ball = Ball(dimension=2)
    sol = solve_discrete(ball, SampledPath.uniform(W, 1e-4))
    rep = verify_solution(sol, ball, r0=1.0, boundary_tol=1e-6, margin_tol=1e-8)
    assert rep.passed, rep.witnesses
    assert rep.summary["reflection_steps"] > 0


def brute_functionals(v, theta):
    v = np.asarray(v, float).reshape(len(v), -1)
    t = np.linspace(0, 1, len(v))
    osc, hol = 0.0, 0.0
    for i in range(len(v)):
        for j in range(i + 1, len(v)):
            d = np.linalg.norm(v[j] - v[i])
            osc = max(osc, d)
            hol = max(hol, d / (t[j] - t[i]) ** theta)
    return osc, hol


def test_functionals_examples():
    const = scalar([2.0, 2.0, 2.0])
    assert (oscillation(const, 0, 1), holder_norm(const, 0, 1, 0.5),
            total_variation(const, 0, 1)) == (0.0, 0.0, 0.0)
    w = scalar([0.0, 1.0, 0.0])
    assert oscillation(w, 0, 1) == 1.0
    assert total_variation(w, 0, 1) == 2.0
    assert holder_norm(w, 0, 1, 1.0) == 2.0
    mono = scalar(np.linspace(0, 3, 7) ** 2)
    assert total_variation(mono, 0, 1) == pytest.approx(oscillation(mono, 0, 1)) == 9.0


def test_functional_window_errors():
    w = scalar(np.arange(5.0))
    with pytest.raises(EmptyWindowError):
        oscillation(w, 0.5, 0.5)
    big = scalar(np.zeros(5000))
    with pytest.raises(WindowTooLargeError):
        oscillation(big, 0.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(arrays(float, st.integers(3, 40), elements=st.floats(-5, 5)), st.floats(0.1, 1.0))
def test_functionals_against_pairwise_scan(v, theta):
    w = scalar(v)
    osc, hol = brute_functionals(v, theta)
    assert oscillation(w, 0, 1) == pytest.approx(osc, rel=1e-12, abs=1e-12)
    assert holder_norm(w, 0, 1, theta) == pytest.approx(hol, rel=1e-12, abs=1e-12)
    assert total_variation(w, 0, 1) >= oscillation(w, 0, 1) - 1e-12


def test_dyadic_functionals_match_direct_windows():
    rng = np.random.default_rng(7)
    v = np.cumsum(rng.standard_normal((65, 2)), axis=0)
    w = SampledPath.uniform(v, 1.0 / 64)
    funcs = dyadic_functionals(w, 0.5)
    assert sorted(funcs) == [1, 2, 4, 8, 16, 32, 64]
    for span, (osc, hol) in funcs.items():
        for k in range(64 // span):
            a, b = k * span, (k + 1) * span
            o, h = brute_functionals(v[a:b + 1], 0.5)
            # brute_functionals measures time on [0, 1]; rescale to the window
            h *= (1.0 / (span / 64)) ** 0.5
            assert osc[k] == pytest.approx(o, rel=1e-12)
            assert hol[k] == pytest.approx(h, rel=1e-12)
    assert dyadic_windows(64)[:2] == [(0, 1), (1, 2)]


def test_variation_bound_straight_line_driver():
    w = SampledPath.uniform(np.linspace(0, 1, 33)[:, None] * [1.0, 0.5], 1 / 32)
    sol = solve_discrete(HalfSpace([1.0, 0.0]), w)
    rep = check_variation_bound(sol, w, 1.0, saisho_constants(1.0, 1, 1, 1))
    assert rep.passed
    assert rep.summary["min_slack"] > 1


def test_variation_bound_degenerate_and_bad_windows():
    w = SampledPath.uniform(np.linspace(0, 1, 9)[:, None], 1 / 8)
    sol = solve_discrete(HalfLine(), w)
    rep = check_variation_bound(sol, w, 0.5, (1.0, 1.0), windows=[(0.5, 0.5), (0.0, 1.0)])
    first = rep.summary["per_window"][0]
    assert (first["lhs"], first["rhs"], first["pass"]) == (0.0, 0.0, True)
    with pytest.raises(ValueError):
        check_variation_bound(sol, w, 0.5, (1.0, 1.0), windows=[(0.0, 2.0)])
    with pytest.raises(ValueError):
        check_variation_bound(sol, w, 0.5, (1.0, 1.0), windows=[(0.75, 0.25)])
    with pytest.raises(ValueError):
        check_variation_bound(sol, w, 1.5, (1.0, 1.0))


def test_variation_bound_detects_inflated_path():
    w = SampledPath.uniform(np.linspace(0, 1, 17)[:, None], 1 / 16)
    sol = solve_discrete(HalfLine(), w)
    sol.X.values[1::2] += 5.0  # a zig-zag no solver would produce
    rep = check_variation_bound(sol, w, 1.0, (1.0, 0.0))
    assert not rep.passed and rep.witnesses


@pytest.mark.parametrize("d", [1, 3])
def test_csv_round_trip_and_header(d):
    rng = np.random.default_rng(d)
    path = SampledPath(np.array([0.0, 1 / 3, 0.7]), rng.standard_normal((3, d)) * 1e-7)
    buf = io.StringIO()
    write_path_csv(buf, path)
    text = buf.getvalue()
    assert text.splitlines()[0] == ",".join(["t"] + [f"x{i + 1}" for i in range(d)])
    assert ";" not in text and "," in text
    back = read_path_csv(io.StringIO(text))
    np.testing.assert_array_equal(back.grid, path.grid)
    np.testing.assert_array_equal(back.values, path.values)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (4, 2), elements=st.floats(-1e300, 1e300)))
def test_csv_round_trip_bit_exact(vals):
    path = SampledPath(np.arange(4.0) / 7, vals)
    buf = io.StringIO()
    write_path_csv(buf, path)
    buf.seek(0)
    back = read_path_csv(buf)
    np.testing.assert_array_equal(back.values, vals)


def test_csv_file_target(tmp_path):
    path = SampledPath.uniform(np.ones((3, 1)), 0.5)
    write_path_csv(tmp_path / "p.csv", path)
    assert read_path_csv(tmp_path / "p.csv").values.tolist() == [[1.0]] * 3


def test_solve_discrete_batch_matches_single_runs():
    rng = np.random.default_rng(7)
    ball = Ball(dimension=2)
    paths = [SampledPath.uniform(np.cumsum(np.vstack([[0.0, 0.0],
                                                      0.2 * rng.standard_normal((50, 2))]),
                                           axis=0), 0.02) for _ in range(5)]
    for w, sol in zip(paths, solve_discrete_batch(ball, paths)):
        one = solve_discrete(ball, w)
        np.testing.assert_array_equal(sol.X.values, one.X.values)
        np.testing.assert_array_equal(sol.Phi.values, one.Phi.values)
    assert solve_discrete_batch(ball, []) == []
    with pytest.raises(ValueError):
        solve_discrete_batch(ball, [paths[0], SampledPath.uniform(paths[1].values, 0.01)])
