"""Brownian drivers, the projected Euler scheme for reflected SDEs, and the
coupling and explosion experiments built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from .coefficients import CoefficientField, ModulusLambda, check_regularity
from .geometry import Domain
from .parallel import PMap, serial_map
from .reports import Report
from .skorohod import ReflectedSolution, SampledPath

__all__ = [
    "BrownianDriver",
    "brownian",
    "driver_values",
    "SimulationError",
    "ExplosionReport",
    "simulate",
    "simulate_batch",
    "simulate_penalized",
    "simulate_terminal",
    "uniqueness_experiment",
    "explosion_experiment",
    "wilson_interval",
]


class SimulationError(RuntimeError):
    def __init__(self, message: str, t: float, x):
        super().__init__(f"{message} at t={t!r}, x={np.asarray(x).tolist()}")
        self.t, self.x = t, np.asarray(x)


def _generator(seed: int, path_index: int, level: int) -> np.random.Generator:
    """Counter-based stream: the key names the path, the counter names the level."""
    key = np.array([seed, path_index], dtype=np.uint64)
    counter = np.array([0, 0, 0, level], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def _steps(T: float, dt: float) -> int:
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    n = int(round(T / dt))
    if n < 1 or not math.isclose(n * dt, T, rel_tol=4 * np.finfo(float).eps, abs_tol=0.0):
        raise ValueError(f"dt={dt!r} does not divide T={T!r}")
    return n


def driver_values(seed: int, path_index: int, dimension: int, n0: int, dt0: float,
                  level: int = 0) -> np.ndarray:
    """Brownian values on the grid ``dt0 / 2^level``, shape ``(n0 2^level + 1, d)``.

    Level 0 sums Gaussian increments; each further level inserts bridge
    midpoints ``(B_a + B_b)/2 + sqrt(h/4) Z`` and keeps existing points.
    """
    g = _generator(seed, path_index, 0)
    B = np.zeros((n0 + 1, dimension))
    np.cumsum(g.standard_normal((n0, dimension)) * math.sqrt(dt0), axis=0, out=B[1:])
    h = dt0
    for lev in range(1, level + 1):
        g = _generator(seed, path_index, lev)
        Z = g.standard_normal((len(B) - 1, dimension))
        fine = np.empty((2 * len(B) - 1, dimension))
        fine[0::2] = B
        fine[1::2] = 0.5 * (B[:-1] + B[1:]) + math.sqrt(h / 4.0) * Z
        B, h = fine, h / 2.0
    return B


@dataclass(frozen=True)
class BrownianDriver:
    """Reproducible d-dimensional Brownian path on ``[0, T]``.

    ``base_dt`` is the level-0 step; ``level`` halvings give ``dt``.
    Coarse grid values are left bitwise unchanged by refinement.
    """

    seed: int
    dimension: int
    T: float
    base_dt: float
    level: int = 0
    path_index: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")
        _steps(self.T, self.base_dt)

    @property
    def dt(self) -> float:
        return self.base_dt / 2**self.level

    @property
    def n_steps(self) -> int:
        return _steps(self.T, self.base_dt) * 2**self.level

    @property
    def grid(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def values(self) -> np.ndarray:
        return driver_values(self.seed, self.path_index, self.dimension,
                             _steps(self.T, self.base_dt), self.base_dt, self.level)

    def increments(self) -> np.ndarray:
        return np.diff(self.values(), axis=0)

    def path(self) -> SampledPath:
        return SampledPath(self.grid, self.values(), self.dt)

    def refine(self) -> "BrownianDriver":
        return BrownianDriver(self.seed, self.dimension, self.T, self.base_dt,
                              self.level + 1, self.path_index)

    def for_path(self, path_index: int) -> "BrownianDriver":
        return BrownianDriver(self.seed, self.dimension, self.T, self.base_dt,
                              self.level, path_index)


def brownian(seed: int, d: int, T: float, dt: float, path_index: int = 0) -> BrownianDriver:
    return BrownianDriver(int(seed), int(d), float(T), float(dt), 0, int(path_index))


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return (float(ci.low), float(ci.high))


@dataclass
class ExplosionReport:
    """Radius-ladder hitting data for a batch of paths (``inf`` = not hit)."""

    R_ladder: list
    T: float
    max_abs: np.ndarray
    hit_times: np.ndarray
    stopped: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def path_count(self) -> int:
        return len(self.max_abs)

    @property
    def hit_counts(self) -> np.ndarray:
        return np.sum(np.isfinite(self.hit_times), axis=0)

    @property
    def fractions(self) -> np.ndarray:
        return self.hit_counts / max(1, self.path_count)

    def intervals(self) -> list[tuple[float, float]]:
        return [wilson_interval(k, self.path_count) for k in self.hit_counts]

    @classmethod
    def merge(cls, parts: Sequence["ExplosionReport"]) -> "ExplosionReport":
        return cls(parts[0].R_ladder, parts[0].T,
                   np.concatenate([p.max_abs for p in parts]),
                   np.vstack([p.hit_times for p in parts]),
                   np.concatenate([p.stopped for p in parts]),
                   dict(parts[0].meta))

    def to_dict(self, per_path_limit: int = 1000) -> dict:
        out = {
            "T": self.T,
            "paths": self.path_count,
            "R_ladder": list(self.R_ladder),
            "hit_counts": self.hit_counts.tolist(),
            "hit_fractions": self.fractions.tolist(),
            "wilson_95": [list(ci) for ci in self.intervals()],
            "stopped": int(self.stopped.sum()),
            "max_abs_overall": float(self.max_abs.max()) if self.path_count else 0.0,
            **self.meta,
        }
        if self.path_count <= per_path_limit:
            out["max_abs"] = self.max_abs.tolist()
            out["hit_times"] = self.hit_times.tolist()
        return out


def _step_increment(cf: CoefficientField, t: float, X: np.ndarray, dB: np.ndarray, dt: float):
    drift = cf.b_at(t, X)
    if cf.sigma is None:
        s = np.broadcast_to(np.asarray(cf.sigma_scalar(t, X), float), (len(X),))
        noise = s[:, None] * dB
    else:
        noise = np.einsum("nij,nj->ni", cf.sigma_at(t, X), dB)
    inc = noise + drift * dt
    bad = ~np.all(np.isfinite(inc), axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise SimulationError("non-finite coefficient value", t, X[i])
    return inc


def _euler(domain: Domain, cf: CoefficientField, X0: np.ndarray, B: np.ndarray, dt: float,
           R_ladder: Sequence[float], record: bool, penalize: bool = False):
    """Vectorised scheme over a batch of driver paths ``B`` of shape ``(n, N+1, d)``."""
    n, N1, d = B.shape
    R = np.asarray(sorted(R_ladder), float) if R_ladder else np.zeros(0)
    R_max = R[-1] if len(R) else math.inf
    X = np.array(X0, float, copy=True)
    hits = np.full((n, len(R)), math.inf)
    r = np.linalg.norm(X, axis=1)
    hits[(r[:, None] >= R[None, :])] = 0.0
    max_abs = r.copy()
    stop = np.full(n, N1 - 1)
    active = r < R_max
    stop[~active] = 0
    if record:
        path = np.empty((n, N1, d))
        phi = np.zeros((n, N1, d))
        W = np.empty((n, N1, d))
        path[:, 0] = W[:, 0] = X
    Phi = np.zeros((n, d))
    Wc = X.copy()
    for k in range(N1 - 1):
        if not active.any():
            if record:
                path[:, k + 1:] = X[:, None, :]
                phi[:, k + 1:] = Phi[:, None, :]
                W[:, k + 1:] = Wc[:, None, :]
            break
        t = k * dt
        idx = np.nonzero(active)[0] if not active.all() else slice(None)
        Xa = X[idx]
        inc = _step_increment(cf, t, Xa, B[idx, k + 1] - B[idx, k], dt)
        if penalize:
            P, _ = domain.project(Xa)
            y = Xa + inc
            new = y - (Xa - P)
        else:
            y = Xa + inc
            new, _ = domain.project(y)
        Phi[idx] += new - y
        Wc[idx] += inc
        X[idx] = new
        if record:
            path[:, k + 1] = X
            phi[:, k + 1] = Phi
            W[:, k + 1] = Wc
        r = np.linalg.norm(new, axis=1)
        ids = np.arange(n)[idx]
        max_abs[ids] = np.maximum(max_abs[ids], r)
        if len(R):
            newly = (r[:, None] >= R[None, :]) & np.isinf(hits[ids])
            if newly.any():
                rows, cols = np.nonzero(newly)
                hits[ids[rows], cols] = (k + 1) * dt
            out = r >= R_max
            if out.any():
                stop[ids[out]] = k + 1
                active[ids[out]] = False
    result = {"max_abs": max_abs, "hits": hits, "stop": stop, "stopped": ~active, "X_end": X}
    if record:
        result.update(path=path, phi=phi, W=W)
    return result


def _solutions(res, grid, dt, R_ladder) -> list[ReflectedSolution]:
    sols = []
    Rs = sorted(R_ladder) if R_ladder else []
    for i in range(len(res["stop"])):
        m = int(res["stop"][i]) + 1
        g = grid[:m]
        X = SampledPath(g, res["path"][i, :m], dt)
        Phi = SampledPath(g, res["phi"][i, :m], dt)
        W = SampledPath(g, res["W"][i, :m], dt)
        tv = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(Phi.values, axis=0), axis=1))])
        hit_R = Rs and math.isfinite(res["hits"][i, -1])
        reason = "radius_hit" if hit_R else "end_of_grid"
        hits = [(R, float(res["hits"][i, j]) if math.isfinite(res["hits"][i, j]) else None)
                for j, R in enumerate(Rs)]
        sols.append(ReflectedSolution(X, Phi, tv, (m - 1, reason), hits, W))
    return sols


def _check_start(domain: Domain, x0) -> np.ndarray:
    x0 = np.asarray(x0, float).ravel()
    if len(x0) != domain.dimension:
        raise ValueError("x0 and domain dimensions differ")
    if not domain.contains(x0):
        raise ValueError("x0 must lie in the closure of the domain")
    return x0


def simulate_batch(domain: Domain, cf: CoefficientField, X0, drivers: Sequence[BrownianDriver],
                   R_ladder: Optional[Sequence[float]] = None, record: bool = True,
                   penalize: bool = False):
    """Run the scheme on several drivers sharing one grid.

    Returns ``(solutions or None, ExplosionReport)``.
    """
    X0 = np.atleast_2d(np.asarray(X0, float))
    if len(X0) == 1:
        X0 = np.repeat(X0, len(drivers), axis=0)
    for x in X0:
        _check_start(domain, x)
    dt, T = drivers[0].dt, drivers[0].T
    if any(dv.dt != dt or dv.T != T for dv in drivers):
        raise ValueError("drivers must share the grid")
    B = np.stack([dv.values() for dv in drivers]) + 0.0
    res = _euler(domain, cf, X0, B, dt, R_ladder or [], record, penalize)
    rep = ExplosionReport(sorted(R_ladder) if R_ladder else [], T, res["max_abs"], res["hits"],
                          res["stopped"])
    sols = _solutions(res, drivers[0].grid, dt, R_ladder) if record else None
    return sols, rep


def simulate(domain: Domain, cf: CoefficientField, x0, driver: BrownianDriver,
             R_ladder: Optional[Sequence[float]] = None) -> tuple[ReflectedSolution, ExplosionReport]:
    """Projected Euler: ``X_{k+1} = P_D(X_k + sigma dB_k + b dt)``, stopped at ``max(R_ladder)``."""
    sols, rep = simulate_batch(domain, cf, x0, [driver], R_ladder)
    return sols[0], rep


def simulate_terminal(domain: Domain, cf: CoefficientField, x0,
                      drivers: Sequence[BrownianDriver]) -> np.ndarray:
    """``X(T)`` for each driver, shape ``(n, d)``, without storing paths."""
    x0 = _check_start(domain, x0)
    B = np.stack([dv.values() for dv in drivers])
    return _euler(domain, cf, np.repeat(x0[None], len(drivers), 0), B, drivers[0].dt, [],
                  False)["X_end"]


def simulate_penalized(domain: Domain, cf: CoefficientField, x0, driver: BrownianDriver,
                       R_ladder: Optional[Sequence[float]] = None):
    """Cross-check scheme with drift ``-(x - P_D(x)) / dt`` in place of projection."""
    if not domain.convex:
        raise ValueError("the penalisation scheme is only offered for convex domains")
    sols, rep = simulate_batch(domain, cf, x0, [driver], R_ladder, penalize=True)
    return sols[0], rep


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def _chunks(seq, size):
    seq = list(seq)
    return [seq[i:i + size] for i in range(0, len(seq), size)]


def _sup_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.max(np.linalg.norm(a - b, axis=-1), axis=-1)


def uniqueness_experiment(domain: Domain, cf: CoefficientField, L: ModulusLambda, x0, T: float,
                          dt: float = 1e-4,
                          perturbations: Sequence[float] = (0.0, 1e-2, 1e-4, 1e-8),
                          seeds: Sequence[int] = tuple(range(100)),
                          dt_ladder: Optional[Sequence[float]] = None,
                          direction=None, radius: float = 10.0,
                          pmap: PMap = serial_map, chunk: int = 25) -> Report:
    """Coupled runs on a shared driver.

    Perturbation cells compare the solution from ``x0`` with the one from
    ``x0 + delta * direction``.  Scheme cells compare step ``h`` with ``h/2``
    on the refined driver over the coarse grid.  Medians and 90th percentiles
    of the sup-distance are reported per cell.
    """
    x0 = _check_start(domain, x0)
    d = domain.dimension
    u = np.zeros(d) if direction is None else np.asarray(direction, float)
    if direction is None:
        u[0] = 1.0
    u = u / np.linalg.norm(u)
    notes = []
    reg = check_regularity(cf, L, domain, radius, T, pair_count=4000, seed=0)
    if not reg.passed:
        notes.append(f"warning: regularity check found {reg.summary['violations']} violations")
    starts = []
    for delta in perturbations:
        y0, _ = domain.project(x0 + delta * u)
        starts.append(y0)

    def perturb_chunk(chunk_seeds):
        drivers = [brownian(s, d, T, dt) for s in chunk_seeds]
        B = np.stack([dv.values() for dv in drivers])
        ref = _euler(domain, cf, np.repeat(x0[None], len(drivers), 0), B, dt, [], True)["path"]
        out = []
        for y0 in starts:
            other = _euler(domain, cf, np.repeat(y0[None], len(drivers), 0), B, dt, [], True)["path"]
            out.append(_sup_distance(ref, other))
        return np.array(out)  # (cells, seeds)

    dist = np.hstack(pmap(perturb_chunk, _chunks(seeds, chunk)))
    cells = [{"dt": dt, "delta0": float(dl), "median": float(np.median(v)),
              "p90": float(np.percentile(v, 90)), "max": float(np.max(v))}
             for dl, v in zip(perturbations, dist)]
    nonzero = sorted((c for c in cells if c["delta0"] > 0), key=lambda c: -c["delta0"])
    decreasing = all(a["median"] > b["median"] for a, b in zip(nonzero, nonzero[1:]))
    control = [c for c in cells if c["delta0"] == 0]
    control_zero = all(c["max"] == 0.0 for c in control)
    summary = {"seeds": len(list(seeds)), "perturbation_cells": cells,
               "median_strictly_decreasing": decreasing, "control_exactly_zero": control_zero}
    passed = decreasing and control_zero

    if dt_ladder:
        ladder = [float(h) for h in dt_ladder]
        for a, b in zip(ladder, ladder[1:]):
            if not math.isclose(a, 2 * b, rel_tol=1e-12):
                raise ValueError("dt_ladder must halve from rung to rung")
        base = ladder[0]

        def scheme_chunk(chunk_seeds):
            rows = []
            for level in range(len(ladder)):
                coarse = [BrownianDriver(s, d, T, base, level) for s in chunk_seeds]
                fine = [dv.refine() for dv in coarse]
                Bc = np.stack([dv.values() for dv in coarse])
                Bf = np.stack([dv.values() for dv in fine])
                X0 = np.repeat(x0[None], len(chunk_seeds), 0)
                Xc = _euler(domain, cf, X0, Bc, coarse[0].dt, [], True)["path"]
                Xf = _euler(domain, cf, X0, Bf, fine[0].dt, [], True)["path"]
                rows.append(_sup_distance(Xc, Xf[:, ::2]))
            return np.array(rows)

        sd = np.hstack(pmap(scheme_chunk, _chunks(seeds, chunk)))
        scheme = [{"dt": h, "median": float(np.median(v)), "p90": float(np.percentile(v, 90))}
                  for h, v in zip(ladder, sd)]
        ratios = [a["median"] / b["median"] if b["median"] > 0 else math.inf
                  for a, b in zip(scheme, scheme[1:])]
        summary.update(scheme_cells=scheme, scheme_ratios=ratios)
        passed = passed and all(r >= 1.2 for r in ratios)
    notes.append("observed decay only; no uniqueness rate is asserted")
    return Report("uniqueness", passed, summary, [], notes)


def explosion_experiment(domain: Domain, cf: CoefficientField, x0, T: float, dt: float,
                         R_ladder: Sequence[float], path_count: int, seed: int,
                         pmap: PMap = serial_map, chunk: int = 500) -> ExplosionReport:
    """Hitting fractions of a radius ladder before ``T`` with Wilson intervals.

    Path ``i`` always uses stream ``(seed, i)``, so the report does not depend
    on chunking or on the number of workers.
    """
    x0 = _check_start(domain, x0)
    base = brownian(seed, domain.dimension, T, dt)

    def run(idx):
        drivers = [base.for_path(i) for i in idx]
        _, rep = simulate_batch(domain, cf, x0, drivers, R_ladder, record=False)
        return rep

    parts = pmap(run, _chunks(range(path_count), chunk))
    rep = ExplosionReport.merge(parts)
    rep.meta = {"seed": int(seed), "dt": dt,
                "note": "non-explosion is reported as zero hitting fractions, not proved"}
    return rep
