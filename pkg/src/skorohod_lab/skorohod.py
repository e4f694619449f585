"""Deterministic Skorohod maps on time grids and the path functionals used to
bound the total variation of reflected paths."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .geometry import Domain, HalfSpace, default_tol
from .reports import FALSIFIER_NOTE, Report

__all__ = [
    "SampledPath",
    "ReflectedSolution",
    "EmptyWindowError",
    "WindowTooLargeError",
    "solve_1d",
    "solve_discrete",
    "solve_discrete_batch",
    "verify_solution",
    "oscillation",
    "holder_norm",
    "total_variation",
    "dyadic_windows",
    "dyadic_functionals",
    "check_variation_bound",
    "write_path_csv",
    "read_path_csv",
]

MAX_WINDOW_POINTS = 4096


class EmptyWindowError(ValueError):
    pass


class WindowTooLargeError(ValueError):
    pass


@dataclass
class SampledPath:
    """Values of a d-dimensional path on a strictly increasing time grid."""

    grid: np.ndarray
    values: np.ndarray
    dt: Optional[float] = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        self.values = v
        if len(self.grid) != len(v):
            raise ValueError("grid and values differ in length")
        if len(self.grid) > 1 and not np.all(np.diff(self.grid) > 0):
            raise ValueError("time grid must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        if self.dt is None and len(self.grid) > 1:
            steps = np.diff(self.grid)
            if np.allclose(steps, steps[0], rtol=1e-9, atol=0):
                self.dt = float(steps[0])

    @classmethod
    def uniform(cls, values, dt: float, t0: float = 0.0) -> "SampledPath":
        v = np.asarray(values, dtype=float)
        n = v.shape[0]
        return cls(t0 + dt * np.arange(n), v, float(dt))

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return len(self.grid)

    def index_of(self, t: float) -> int:
        """Nearest grid index to time ``t``."""
        return int(np.argmin(np.abs(self.grid - t)))

    def slice(self, i0: int, i1: int) -> "SampledPath":
        return SampledPath(self.grid[i0:i1 + 1], self.values[i0:i1 + 1], self.dt)


@dataclass
class ReflectedSolution:
    X: SampledPath
    Phi: SampledPath
    total_variation: np.ndarray
    stopped_at: tuple = (0, "end_of_grid")
    radius_hits: list = field(default_factory=list)
    W: Optional[SampledPath] = None

    def check_invariants(self, domain: Optional[Domain] = None) -> None:
        if np.any(self.Phi.values[0] != 0):
            raise AssertionError("reflection term must start at zero")
        inc = np.linalg.norm(np.diff(self.Phi.values, axis=0), axis=1)
        tv = np.concatenate([[0.0], np.cumsum(inc)])
        if not np.allclose(tv, self.total_variation, rtol=1e-12, atol=1e-12):
            raise AssertionError("total variation does not match the increments of Phi")
        if domain is not None and not np.all(domain.contains(self.X.values)):
            raise AssertionError("solution leaves the closure of the domain")


def solve_1d(w: SampledPath) -> tuple[SampledPath, SampledPath]:
    """Exact reflection of a scalar grid path on ``[0, inf)``.

    ``xi = w`` up to the first index where ``w < 0``; afterwards
    ``xi(t) = w(t) - min{w(s) : tau <= s <= t}``.
    """
    v = np.asarray(w.values, dtype=float)
    if v.shape[1] != 1:
        raise ValueError("solve_1d needs a scalar path")
    v = v[:, 0]
    if v[0] < 0:
        raise ValueError("w(0) must be nonnegative")
    neg = np.nonzero(v < 0)[0]
    phi = np.zeros_like(v)
    if len(neg):
        tau = neg[0]
        phi[tau:] = -np.minimum.accumulate(v[tau:])
    xi = v + phi
    return (SampledPath(w.grid, xi[:, None], w.dt), SampledPath(w.grid, phi[:, None], w.dt))


def solve_discrete(domain: Domain, w: SampledPath) -> ReflectedSolution:
    """Projected-increment scheme ``X_{k+1} = P_D(X_k + w_{k+1} - w_k)``."""
    return solve_discrete_batch(domain, [w])[0]


def solve_discrete_batch(domain: Domain, paths: Sequence[SampledPath]) -> list[ReflectedSolution]:
    """:func:`solve_discrete` for paths on a common grid, one projection per step."""
    if not paths:
        return []
    grid = paths[0].grid
    for w in paths[1:]:
        if w.grid.shape != grid.shape or not np.array_equal(w.grid, grid):
            raise ValueError("batched paths must share one time grid")
    V = np.stack([w.values for w in paths])  # (m, n, d)
    if V.shape[2] != domain.dimension:
        raise ValueError("path and domain dimensions differ")
    if not np.all(domain.contains(V[:, 0])):
        raise ValueError("w(0) must lie in the closure of the domain")
    m, n, _ = V.shape
    X = np.empty_like(V)
    Phi = np.zeros_like(V)
    X[:, 0] = V[:, 0]
    dW = np.diff(V, axis=1)
    for k in range(n - 1):
        Y = X[:, k] + dW[:, k]
        X[:, k + 1], _ = domain.project(Y)
        Phi[:, k + 1] = Phi[:, k] + (X[:, k + 1] - Y)
    tv = np.concatenate([np.zeros((m, 1)),
                         np.cumsum(np.linalg.norm(np.diff(Phi, axis=1), axis=2), axis=1)], axis=1)
    return [ReflectedSolution(SampledPath(w.grid, X[i], w.dt), SampledPath(w.grid, Phi[i], w.dt),
                              tv[i], (n - 1, "end_of_grid"), [], w)
            for i, w in enumerate(paths)]


def _margins_chunked(xs, ns, ys, r, chunk=2048):
    """Smallest ``<y - x, n> + |y - x|^2/(2r)`` over ``ys`` for each (x, n)."""
    out = np.empty(len(xs))
    arg = np.empty(len(xs), dtype=int)
    yy = np.sum(ys * ys, axis=1)
    for i in range(0, len(xs), chunk):
        x, n = xs[i:i + chunk], ns[i:i + chunk]
        lin = ys @ n.T - np.sum(x * n, axis=1)
        sq = yy[:, None] - 2.0 * ys @ x.T + np.sum(x * x, axis=1)
        M = lin + np.maximum(sq, 0.0) / (2.0 * r)
        arg[i:i + chunk] = np.argmin(M, axis=0)
        out[i:i + chunk] = M[arg[i:i + chunk], np.arange(len(x))]
    return out, arg


def verify_solution(sol: ReflectedSolution, domain: Domain, r0: Optional[float] = None,
                    boundary_tol: float = 1e-6, margin_tol: float = 1e-8,
                    phi_tol: float = 0.0, sample_count: int = 512, seed: int = 0) -> Report:
    """Discrete checks of the reflection-term properties.

    (i) ``Phi(0) = 0``; (ii) each step that moves Phi ends within
    ``boundary_tol * (1 + |x|)`` of the boundary; (iii) each such increment,
    normalised, passes the exterior-ball inequality at radius ``r0`` against
    sampled closure points (the path's own points included).
    """
    r = r0 if r0 is not None else (domain.meta_r0 or 1.0)
    X, Phi = sol.X.values, sol.Phi.values
    dphi = np.diff(Phi, axis=0)
    mag = np.linalg.norm(dphi, axis=1)
    steps = np.nonzero(mag > phi_tol)[0]
    start_ok = bool(np.all(Phi[0] == 0))
    xs = X[steps + 1]
    bdist = domain.boundary_distance(xs) if len(steps) else np.zeros(0)
    btol = boundary_tol * (1.0 + np.linalg.norm(xs, axis=1))
    off_boundary = np.nonzero(bdist > btol)[0]

    witnesses = []
    worst = math.inf
    normal_fail = np.zeros(0, dtype=int)
    if len(steps):
        rng = np.random.default_rng(seed)
        ys = np.vstack([domain.sample_closure(sample_count, rng, center=X.mean(axis=0)),
                        domain.boundary_sampler(sample_count, seed),
                        X[:: max(1, len(X) // sample_count)]])
        ns = dphi[steps] / mag[steps, None]
        m, arg = _margins_chunked(xs, ns, ys, r)
        m = np.minimum(m, 0.0)  # y = x itself contributes margin 0
        worst = float(m.min())
        normal_fail = np.nonzero(m < -margin_tol)[0]
        for i in normal_fail[:10]:
            witnesses.append({"step": int(steps[i]), "x": xs[i], "n": ns[i],
                              "y": ys[arg[i]], "margin": float(m[i])})
    for i in off_boundary[:10]:
        witnesses.append({"step": int(steps[i]), "x": xs[i], "boundary_distance": float(bdist[i])})
    comp = float(np.sum(mag[steps] * bdist)) if len(steps) else 0.0
    passed = start_ok and len(off_boundary) == 0 and len(normal_fail) == 0
    return Report(
        "reflected_solution",
        passed,
        {"phi_starts_at_zero": start_ok,
         "reflection_steps": int(len(steps)),
         "boundary_violations": int(len(off_boundary)),
         "normal_violations": int(len(normal_fail)),
         "worst_normal_margin": worst if len(steps) else 0.0,
         "complementarity": comp,
         "total_variation": float(sol.total_variation[-1]),
         "radius_used": r},
        witnesses,
        [FALSIFIER_NOTE] if len(steps) else ["no reflection steps: vacuous pass"],
    )


# ---------------------------------------------------------------------------
# Path functionals
# ---------------------------------------------------------------------------

def _window(w: SampledPath, s: float, t: float) -> tuple[int, int]:
    i0, i1 = w.index_of(s), w.index_of(t)
    if i1 <= i0:
        raise EmptyWindowError(f"window [{s}, {t}] snaps to fewer than two grid points")
    return i0, i1


def _pairwise(v: np.ndarray) -> np.ndarray:
    diff = v[:, None, :] - v[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def oscillation(w: SampledPath, s: float, t: float) -> float:
    """``sup |w(t2) - w(t1)|`` over grid points of ``[s, t]``."""
    i0, i1 = _window(w, s, t)
    if i1 - i0 + 1 > MAX_WINDOW_POINTS:
        raise WindowTooLargeError(f"window has {i1 - i0 + 1} points (cap {MAX_WINDOW_POINTS})")
    return float(_pairwise(w.values[i0:i1 + 1]).max())


def holder_norm(w: SampledPath, s: float, t: float, theta: float) -> float:
    i0, i1 = _window(w, s, t)
    if i1 - i0 + 1 > MAX_WINDOW_POINTS:
        raise WindowTooLargeError(f"window has {i1 - i0 + 1} points (cap {MAX_WINDOW_POINTS})")
    g = w.grid[i0:i1 + 1]
    D = _pairwise(w.values[i0:i1 + 1])
    lag = np.abs(g[:, None] - g[None, :])
    iu = np.triu_indices(len(g), 1)
    return float(np.max(D[iu] / lag[iu] ** theta))


def total_variation(w: SampledPath, s: float, t: float) -> float:
    """Sum of consecutive increment norms; exact for grid paths."""
    i0, i1 = _window(w, s, t)
    return float(np.sum(np.linalg.norm(np.diff(w.values[i0:i1 + 1], axis=0), axis=1)))


def dyadic_windows(n_steps: int, max_points: int = MAX_WINDOW_POINTS) -> list[tuple[int, int]]:
    """Index windows ``[k 2^j, (k+1) 2^j]`` with at most ``max_points`` points."""
    out = []
    span = 1
    while span <= n_steps and span + 1 <= max_points:
        out.extend((a, a + span) for a in range(0, n_steps - span + 1, span))
        span *= 2
    return out


def dyadic_functionals(w: SampledPath, theta: float,
                       max_points: int = MAX_WINDOW_POINTS,
                       chunk_elems: int = 4_000_000) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Oscillation and Holder norm on every dyadic window, bottom-up.

    A window's pairs split into those of its two halves plus the cross pairs
    between them, so every pair is scanned exactly once.  Returns
    ``{span: (oscillation, holder)}`` with arrays indexed by window number.
    Requires a uniform grid.
    """
    if w.dt is None:
        raise ValueError("dyadic functionals need a uniform grid")
    v = w.values
    n = len(v) - 1
    d = v.shape[1]
    inc = np.linalg.norm(np.diff(v, axis=0), axis=1)
    osc = inc.copy()
    hol = inc / w.dt**theta
    out = {1: (osc, hol)}
    span = 2
    while span <= n and span + 1 <= max_points:
        h = span // 2
        nw = n // span
        a = np.arange(nw) * span
        lo_osc = np.maximum(osc[0:2 * nw:2], osc[1:2 * nw:2])
        lo_hol = np.maximum(hol[0:2 * nw:2], hol[1:2 * nw:2])
        p = np.arange(h)
        q = h + 1 + np.arange(h)
        cross_osc = np.zeros(nw)
        cross_hol = np.zeros(nw)
        lag = ((q[None, :] - p[:, None]) * w.dt) ** theta
        per = max(1, chunk_elems // (h * len(q) * d))
        for c in range(0, nw, per):
            aa = a[c:c + per]
            L = v[aa[:, None] + p[None, :]]
            R = v[aa[:, None] + q[None, :]]
            diff = R[:, None, :, :] - L[:, :, None, :]
            dist = np.sqrt(np.sum(diff * diff, axis=-1))
            cross_osc[c:c + per] = dist.reshape(len(aa), -1).max(axis=1)
            cross_hol[c:c + per] = (dist / lag).reshape(len(aa), -1).max(axis=1)
        osc = np.maximum(lo_osc, cross_osc)
        hol = np.maximum(lo_hol, cross_hol)
        out[span] = (osc, hol)
        span *= 2
    return out


def check_variation_bound(sol: ReflectedSolution, W: SampledPath, theta: float,
                          constants: tuple[float, float],
                          windows: Union[str, Sequence[tuple[float, float]]] = "dyadic",
                          max_points: int = MAX_WINDOW_POINTS) -> Report:
    """Check ``|X|_s^t <= C1 (1 + (t-s) |W|_H^{1/theta}) exp(C2 osc(W)) osc(W)``.

    ``windows`` is ``"dyadic"`` or a list of ``(s, t)`` times snapped to the
    grid.  ``s == t`` is allowed and passes with both sides zero.
    """
    if not (0 < theta <= 1):
        raise ValueError("theta must lie in (0, 1]")
    C1, C2 = constants
    X = sol.X
    if len(W) != len(X) or not np.array_equal(W.grid, X.grid):
        raise ValueError("solution and driver must share the grid")
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(X.values, axis=0), axis=1))])
    rows = []
    if windows == "dyadic":
        funcs = dyadic_functionals(W, theta, max_points)
        for span, (osc, hol) in funcs.items():
            a = np.arange(len(osc)) * span
            lhs = cum[a + span] - cum[a]
            dur = W.grid[a + span] - W.grid[a]
            rhs = C1 * (1.0 + dur * hol ** (1.0 / theta)) * np.exp(C2 * osc) * osc
            rows.append((a, a + span, lhs, rhs))
        i0 = np.concatenate([r[0] for r in rows])
        i1 = np.concatenate([r[1] for r in rows])
        lhs = np.concatenate([r[2] for r in rows])
        rhs = np.concatenate([r[3] for r in rows])
    else:
        i0l, i1l, lhsl, rhsl = [], [], [], []
        for s, t in windows:
            a, b = W.index_of(s), W.index_of(t)
            if s > t or a > b:
                raise ValueError(f"window [{s}, {t}] is reversed")
            if not (W.grid[0] - 1e-12 <= s and t <= W.grid[-1] + 1e-12):
                raise ValueError(f"window [{s}, {t}] lies outside the grid")
            if a == b:
                l_, r_ = 0.0, 0.0
            else:
                if b - a + 1 > max_points:
                    raise WindowTooLargeError(f"window has {b - a + 1} points")
                osc = oscillation(W, W.grid[a], W.grid[b])
                hol = holder_norm(W, W.grid[a], W.grid[b], theta)
                l_ = cum[b] - cum[a]
                r_ = C1 * (1 + (W.grid[b] - W.grid[a]) * hol ** (1 / theta)) * math.exp(C2 * osc) * osc
            i0l.append(a), i1l.append(b), lhsl.append(l_), rhsl.append(r_)
        i0, i1 = np.array(i0l, int), np.array(i1l, int)
        lhs, rhs = np.array(lhsl, float), np.array(rhsl, float)
    ok = lhs <= rhs
    with np.errstate(divide="ignore", invalid="ignore"):
        slack = np.where(lhs > 0, rhs / lhs, np.inf)
    bad = np.nonzero(~ok)[0]
    summary = {"theta": theta, "C1": C1, "C2": C2, "windows": int(len(ok)),
               "passed_windows": int(ok.sum()),
               "min_slack": float(slack.min()) if len(slack) else math.inf}
    if len(ok) <= 256:
        summary["per_window"] = [
            {"s": float(X.grid[a]), "t": float(X.grid[b]), "pass": bool(p), "slack": float(sl),
             "lhs": float(l_), "rhs": float(r_)}
            for a, b, p, sl, l_, r_ in zip(i0, i1, ok, slack, lhs, rhs)]
    witnesses = [{"s": float(X.grid[i0[i]]), "t": float(X.grid[i1[i]]),
                  "lhs": float(lhs[i]), "rhs": float(rhs[i])} for i in bad[:10]]
    notes = ["a failing window points at a solver bug, not at the bound"] if len(bad) else []
    return Report("variation_bound", bool(ok.all()), summary, witnesses, notes)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_path_csv(target, path: SampledPath) -> None:
    """Header ``t,x1,...,xd`` then one row per grid point at 17 significant digits."""
    header = ["t"] + [f"x{i + 1}" for i in range(path.dimension)]

    def _write(fh):
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for t, row in zip(path.grid, path.values):
            wr.writerow([_fmt(t)] + [_fmt(v) for v in row])

    if hasattr(target, "write"):
        _write(target)
    else:
        with open(os.fspath(target), "w", newline="", encoding="utf-8") as fh:
            _write(fh)


def read_path_csv(source) -> SampledPath:
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(os.fspath(source), encoding="utf-8") as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    if header[0] != "t" or header[1:] != [f"x{i + 1}" for i in range(len(header) - 1)]:
        raise ValueError(f"unexpected CSV header {header}")
    data = np.array([[float(x) for x in r] for r in body], dtype=float)
    return SampledPath(data[:, 0], data[:, 1:])
