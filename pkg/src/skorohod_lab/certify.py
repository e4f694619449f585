"""Lyapunov and covering certificates for non-explosion, plus the boundary
excursion bookkeeping replayed on simulated paths."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .coefficients import CoefficientField, GrowthGamma, make_preset
from .geometry import (Domain, HalfSpace, Profile, Tube, sample_normal_cone)
from .reports import FALSIFIER_NOTE, Report
from .skorohod import ReflectedSolution

__all__ = [
    "LyapunovCertificate",
    "LyapunovPreset",
    "check_V1",
    "check_V2",
    "check_V3",
    "preset_example_2_1",
    "tube_g_constant",
    "CoveringSpec",
    "greedy_cover",
    "check_covering",
    "covering_preset",
    "excursion_diagnostic",
]

ScalarField = Callable[[float, np.ndarray], np.ndarray]


def _unit_rows(rng, n, d):
    U = rng.standard_normal((n, d))
    return U / np.linalg.norm(U, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Lyapunov certificates
# ---------------------------------------------------------------------------

@dataclass
class LyapunovCertificate:
    """``V(t, X) -> (n,)`` with optional analytic derivatives on batches.

    Missing derivatives fall back to central differences with step
    ``fd_scale * (1 + |x|)`` (and ``fd_scale * (1 + t)`` in time).
    """

    V: ScalarField
    gradV: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    lapV: Optional[ScalarField] = None
    dtV: Optional[ScalarField] = None
    fd_scale: float = 1e-5
    label: str = "V"

    def value(self, t: float, X) -> np.ndarray:
        return np.asarray(self.V(t, np.atleast_2d(X)), float)

    def _h(self, X):
        return self.fd_scale * (1.0 + np.linalg.norm(X, axis=1))

    def fd_grad(self, t: float, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        h = self._h(X)
        G = np.empty_like(X)
        for i in range(X.shape[1]):
            E = np.zeros_like(X)
            E[:, i] = h
            G[:, i] = (self.V(t, X + E) - self.V(t, X - E)) / (2 * h)
        return G

    def fd_lap(self, t: float, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        h = self._h(X)
        v0 = self.V(t, X)
        out = np.zeros(len(X))
        for i in range(X.shape[1]):
            E = np.zeros_like(X)
            E[:, i] = h
            out += (self.V(t, X + E) - 2 * v0 + self.V(t, X - E)) / h**2
        return out

    def fd_dt(self, t: float, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        h = self.fd_scale * (1.0 + abs(t))
        return (self.V(t + h, X) - self.V(t - h, X)) / (2 * h)

    def grad(self, t: float, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        return np.asarray(self.gradV(t, X), float) if self.gradV else self.fd_grad(t, X)

    def lap(self, t: float, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        out = self.lapV(t, X) if self.lapV else self.fd_lap(t, X)
        return np.broadcast_to(np.asarray(out, float), (len(X),))

    def time_derivative(self, t: float, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        out = self.dtV(t, X) if self.dtV else self.fd_dt(t, X)
        return np.broadcast_to(np.asarray(out, float), (len(X),))


def _shell_points(domain: Domain, R: float, count: int, rng) -> np.ndarray:
    """Closure points with ``|x| >= R``, half of them on the sphere ``|x| = R``."""
    d = domain.dimension
    chunks, have, tries = [], 0, 0
    while have < count and tries < 50:
        tries += 1
        n = 4 * count
        rho = np.where(rng.random(n) < 0.5, 1.0,
                       1.0 + np.exp(rng.uniform(math.log(1e-6), math.log(3.0), n)))
        P = R * rho[:, None] * _unit_rows(rng, n, d)
        ok = domain.contains(P, tol=0.0)
        chunks.append(P[ok])
        Q, _ = domain.project(P[~ok])
        chunks.append(Q[np.linalg.norm(Q, axis=1) >= R])
        have += int(ok.sum())
    P = np.vstack(chunks) if chunks else np.zeros((0, d))
    return P[:count] if len(P) > count else P


def check_V1(cert: LyapunovCertificate, domain: Domain, T: float,
             R_ladder: Sequence[float] = (1, 2, 4, 8, 16), samples_per_shell: int = 4000,
             seed: int = 0, escape_threshold: float = 100.0) -> Report:
    """Sampled infima of V over ``closure(D) minus B(R)`` must increase along the ladder
    and exceed ``escape_threshold`` at the top rung."""
    rng = np.random.default_rng(seed)
    ladder = sorted(float(r) for r in R_ladder)
    infima, where = [], []
    for R in ladder:
        P = _shell_points(domain, R, samples_per_shell, rng)
        if len(P) == 0:
            infima.append(math.inf)
            where.append(None)
            continue
        t = rng.uniform(0.0, T, len(P))
        t[: len(P) // 4] = 0.0
        v = _eval_timewise(cert.value, t, P)
        i = int(np.argmin(v))
        infima.append(float(v[i]))
        where.append({"t": float(t[i]), "x": P[i]})
    increasing = all(b > a for a, b in zip(infima, infima[1:]))
    top_ok = infima[-1] > escape_threshold
    return Report(
        "lyapunov_V1",
        increasing and top_ok,
        {"R_ladder": ladder, "shell_infima": infima, "strictly_increasing": increasing,
         "escape_threshold": escape_threshold, "top_rung_exceeds_threshold": top_ok},
        [w for w in where if w is not None][:len(ladder)],
        ["necessary-condition check: a limit is replaced by a finite ladder", FALSIFIER_NOTE],
    )


def _eval_timewise(fn, t: np.ndarray, X: np.ndarray, groups: int = 64) -> np.ndarray:
    """Evaluate ``fn(t, X)`` with times pooled into groups (each group's times
    are replaced by their median, which is written back into ``t``)."""
    out = np.empty(len(X))
    for idx in np.array_split(np.argsort(t, kind="stable"), max(1, min(groups, len(X)))):
        if len(idx) == 0:
            continue
        tt = float(np.median(t[idx]))
        t[idx] = tt
        out[idx] = fn(tt, X[idx])
    return out


def check_V2(cert: LyapunovCertificate, domain: Domain, boundary_samples: int = 10000,
             seed: int = 0, T: float = 1.0, tol: float = 1e-9, cone_samples: int = 8) -> Report:
    """``max <grad V, n>`` over sampled boundary points and inward normals."""
    rng = np.random.default_rng(seed)
    P = domain.boundary_sampler(boundary_samples, seed)
    times = rng.uniform(0.0, T, len(P))
    flagged = 0
    xs, ns, ts = [], [], []
    for x, t in zip(P, times):
        rays = domain.normal_cone_rays(x)
        if len(rays) > 1:
            flagged += 1
            rays = sample_normal_cone(rays, cone_samples, rng)
        xs.append(np.repeat(x[None], len(rays), 0))
        ns.append(rays)
        ts.append(np.full(len(rays), t))
    X, N, tt = np.vstack(xs), np.vstack(ns), np.concatenate(ts)
    G = np.empty_like(X)
    for idx in np.array_split(np.argsort(tt, kind="stable"), 64):
        if len(idx):
            t0 = float(np.median(tt[idx]))
            tt[idx] = t0
            G[idx] = cert.grad(t0, X[idx])
    ip = np.sum(G * N, axis=1)
    i = int(np.argmax(ip))
    worst = float(ip[i])
    return Report(
        "lyapunov_V2",
        worst <= tol,
        {"max_inner_product": worst, "tol": tol, "boundary_points": len(P),
         "pairs": len(ip), "non_smooth_points": flagged},
        [{"t": float(tt[i]), "x": X[i], "n": N[i], "inner_product": worst}],
        [FALSIFIER_NOTE] + (["cone directions at non-smooth points come from sampled cone rays"]
                            if flagged else []),
    )


def _closure_samples(domain: Domain, count: int, rng, radius: float) -> np.ndarray:
    d = domain.dimension
    c, _ = domain.project(np.zeros(d))
    r = np.exp(rng.uniform(math.log(1e-6), math.log(radius), count))
    X, _ = domain.project(c + r[:, None] * _unit_rows(rng, count, d))
    k = count // 5
    if k:
        X[:k] = domain.boundary_sampler(k, int(rng.integers(2**31)))
    return X


def check_V3(cert: LyapunovCertificate, cf: CoefficientField, G: GrowthGamma, g, domain: Domain,
             T: float, sample_count: int = 100000, seed: int = 0, radius: float = 1e4,
             rtol: float = 1e-9) -> Report:
    """``||sigma||^2 lap V + 2 <b, grad V> + 2 dV/dt <= g(t) gamma(V)`` on samples."""
    rng = np.random.default_rng(seed)
    gfun = g if callable(g) else (lambda t, _g=float(g): _g)
    X = _closure_samples(domain, sample_count, rng, radius)
    t = rng.uniform(0.0, T, len(X))
    lhs = np.empty(len(X))
    rhs = np.empty(len(X))
    for idx in np.array_split(np.argsort(t, kind="stable"), 64):
        if len(idx) == 0:
            continue
        tt = float(np.median(t[idx]))
        t[idx] = tt
        Xi = X[idx]
        gv = cert.grad(tt, Xi)
        lhs[idx] = (cf.sigma_norm2(tt, Xi) * cert.lap(tt, Xi)
                    + 2 * np.sum(cf.b_at(tt, Xi) * gv, axis=1)
                    + 2 * cert.time_derivative(tt, Xi))
        rhs[idx] = gfun(tt) * G(cert.value(tt, Xi))
    resid = lhs - rhs
    bad = np.nonzero(resid > rtol * np.abs(rhs))[0]
    i = int(np.argmax(resid))
    return Report(
        "lyapunov_V3",
        len(bad) == 0,
        {"samples": len(X), "violations": int(len(bad)), "worst_residual": float(resid[i]),
         "worst_ratio": float(np.max(lhs / rhs)), "gamma": G.label, "radius": radius},
        [{"t": float(t[i]), "x": X[i], "lhs": float(lhs[i]), "rhs": float(rhs[i])}],
        [FALSIFIER_NOTE, "g is deterministic"],
    )


# ---------------------------------------------------------------------------
# Lyapunov presets
# ---------------------------------------------------------------------------

@dataclass
class LyapunovPreset:
    domain: Domain
    certificate: LyapunovCertificate
    gamma: GrowthGamma
    g: float
    coefficients: CoefficientField
    notes: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.domain, self.certificate, self.gamma, self.g))


def _tube_certificate(profile: Profile, m: float, d: int, linear_slope: Optional[float]):
    if linear_slope is not None:
        k = linear_slope

        def V(t, X):
            return 0.5 * k * (X[:, 0] + 1.0) ** 2 + 0.5 * m * np.sum(X[:, 1:] ** 2, axis=1)
    else:
        from .coefficients import adaptive_simpson

        def V(t, X):
            first = np.array([adaptive_simpson(profile.H, -1.0, a, 1e-12).value for a in X[:, 0]])
            return first + 0.5 * m * np.sum(X[:, 1:] ** 2, axis=1)

    def grad(t, X):
        G = m * X.copy()
        G[:, 0] = profile.H(X[:, 0])
        return G

    def lap(t, X):
        return profile.dH(X[:, 0]) + m * (d - 1)

    return LyapunovCertificate(V, grad, lap, lambda t, X: np.zeros(len(X)),
                               label=f"int_-1^x1 H + {m}/2 |x~|^2")


def tube_g_constant(domain: Domain, cert: LyapunovCertificate, cf: CoefficientField,
                    G: GrowthGamma, radius: float = 1e6, safety: float = 1.25) -> float:
    """Deterministic dense-grid maximisation of ``lhs / gamma(V)`` times ``safety``."""
    d = domain.dimension
    s = np.concatenate([np.linspace(-1.0, 2.0, 301),
                        np.geomspace(2.0, radius, 400)])
    H = domain.profile.H(s)
    frac = np.linspace(0.0, 1.0, 41)
    a = np.repeat(s, len(frac))
    rho = (H[:, None] * frac[None, :]).ravel()
    X = np.zeros((len(a), d))
    X[:, 0] = a
    X[:, 1] = rho
    lhs = (cf.sigma_norm2(0.0, X) * cert.lap(0.0, X)
           + 2 * np.sum(cf.b_at(0.0, X) * cert.grad(0.0, X), axis=1))
    ratio = lhs / G(cert.value(0.0, X))
    return float(safety * np.max(ratio))


def preset_example_2_1(variant: str = "convex", dimension: int = 2, C: float = 1.0,
                       profile: Optional[Profile] = None, m: float = 4.0,
                       M: float = 0.0) -> LyapunovPreset:
    """Log-linear-growth coefficients with a Lyapunov certificate.

    ``convex``: half-space ``{x1 >= -1}``, ``V = |x|^2`` and
    ``g = 8 d C^2 + 4 C``.  ``tube``: ``{x1 >= -1, |x~| <= H(x1)}`` with
    ``V = int_{-1}^{x1} H + (m/2)|x~|^2`` and ``g`` from
    :func:`tube_g_constant`.  ``gamma(s) = s log(s+1) + 1`` in both cases.
    """
    cf = make_preset("loglinear", dimension, C=C)
    G = GrowthGamma("slog")
    if variant == "convex":
        domain = HalfSpace(np.eye(dimension)[0], -1.0, window=32.0)
        cert = LyapunovCertificate(
            lambda t, X: np.sum(X * X, axis=1),
            lambda t, X: 2.0 * X,
            lambda t, X: np.full(len(X), 2.0 * X.shape[1]),
            lambda t, X: np.zeros(len(X)),
            label="|x|^2")
        return LyapunovPreset(domain, cert, G, 8.0 * dimension * C * C + 4.0 * C, cf)
    if variant == "tube":
        profile = profile or Profile.linear(1.0)
        slope = None
        if profile.label.endswith("*(s+1)"):
            slope = float(profile.dH(np.array([0.0]))[0])
        s = np.linspace(max(M, 0.0) + 1e-9, max(M, 0.0) + 1e3, 2001)
        if slope is not None:
            integral = 0.5 * slope * (s + 1.0) ** 2
            if np.any(integral < s**2 / m):
                raise ValueError("profile violates the growth condition on its integral")
        domain = Tube(profile, dimension, window=32.0)
        cert = _tube_certificate(profile, m, dimension, slope)
        g = tube_g_constant(domain, cert, cf, G)
        return LyapunovPreset(domain, cert, G, g, cf,
                              ["g from a deterministic grid maximisation with a 1.25 safety factor"])
    raise ValueError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# Covering condition
# ---------------------------------------------------------------------------

@dataclass
class CoveringSpec:
    """Boundary centers ``x_n`` with radii ``delta_n`` and the constants of the
    covering condition; the family is instantiated inside ``window`` only."""

    centers: np.ndarray
    radii: np.ndarray
    delta_hat: float
    beta_hat: float
    nu: float
    C: float
    T: float
    window: float = 10.0

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, float))
        self.radii = np.broadcast_to(np.asarray(self.radii, float), (len(self.centers),)).copy()
        if not (0.0 < self.beta_hat < 1.0):
            raise ValueError("beta_hat must lie in (0, 1)")
        if not (0.0 <= self.nu < 1.0):
            raise ValueError("nu must lie in [0, 1)")
        if self.delta_hat <= 0 or self.C <= 0 or self.T <= 0:
            raise ValueError("delta_hat, C and T must be positive")
        if np.any(self.radii < self.delta_hat):
            raise ValueError("every radius must be at least delta_hat")


def greedy_cover(points: np.ndarray, radius_fn: Callable[[np.ndarray], np.ndarray],
                 beta_hat: float, shrink: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Pick centers among ``points`` until each lies within
    ``shrink * beta_hat * radius_fn(center)`` of a chosen center."""
    points = np.asarray(points, float)
    covered = np.zeros(len(points), bool)
    rad = radius_fn(points)
    centers, radii = [], []
    for i in range(len(points)):
        if covered[i]:
            continue
        centers.append(points[i])
        radii.append(rad[i])
        covered |= np.linalg.norm(points - points[i], axis=1) < shrink * beta_hat * rad[i]
    return np.array(centers), np.array(radii)


def _ball_samples(domain: Domain, x, delta, count, rng):
    d = domain.dimension
    U = _unit_rows(rng, count, d)
    r = delta * rng.random(count) ** (1.0 / d)
    r[: count // 4] = delta * (1 - 1e-12)
    P, _ = domain.project(x + r[:, None] * U)
    inside = np.linalg.norm(P - x, axis=1) < delta
    return np.vstack([x[None], P[inside]])


def check_covering(spec: CoveringSpec, cf: CoefficientField, domain: Domain,
                   samples: int = 2000, seed: int = 0, boundary_samples: int = 5000,
                   probes: Optional[np.ndarray] = None, rtol: float = 1e-9) -> Report:
    """(i) ``M(x_n, delta_n, T) <= C delta_n^nu`` by sampled maximisation;
    (ii) sampled boundary points in the window (and any ``probes``) lie in
    some ``B(x_n, beta_hat delta_n)``."""
    rng = np.random.default_rng(seed)
    Ms, bounds, witnesses = [], [], []
    times = np.linspace(0.0, spec.T, 5)
    for x, dl in zip(spec.centers, spec.radii):
        P = _ball_samples(domain, x, dl, samples, rng)
        M = 0.0
        for t in times:
            M = max(M, float(np.max(np.maximum(cf.sigma_norm2(t, P),
                                               np.sum(cf.b_at(t, P) ** 2, axis=1)))))
        Ms.append(M)
        bounds.append(spec.C * dl**spec.nu)
    Ms, bounds = np.array(Ms), np.array(bounds)
    m_bad = np.nonzero(Ms > bounds * (1 + rtol))[0]
    for i in m_bad[:10]:
        witnesses.append({"center": spec.centers[i], "delta": float(spec.radii[i]),
                          "M": float(Ms[i]), "bound": float(bounds[i])})
    B = domain.boundary_sampler(boundary_samples, seed + 1)
    B = B[np.linalg.norm(B, axis=1) <= spec.window]
    if probes is not None:
        B = np.vstack([B, np.atleast_2d(probes)])
    D = np.linalg.norm(B[:, None, :] - spec.centers[None, :, :], axis=2)
    slack = D / (spec.beta_hat * spec.radii[None, :])
    best = np.argmin(slack, axis=1)
    uncovered = np.nonzero(slack[np.arange(len(B)), best] >= 1.0)[0]
    for i in uncovered[:10]:
        witnesses.append({"uncovered_point": B[i], "nearest_center": spec.centers[best[i]],
                          "distance": float(D[i, best[i]]),
                          "ball_radius": float(spec.beta_hat * spec.radii[best[i]])})
    return Report(
        "covering",
        len(m_bad) == 0 and len(uncovered) == 0,
        {"centers": len(spec.centers), "window": spec.window, "nu": spec.nu, "C": spec.C,
         "beta_hat": spec.beta_hat, "delta_hat": spec.delta_hat,
         "max_M_over_bound": float(np.max(Ms / bounds)) if len(Ms) else 0.0,
         "M_violations": int(len(m_bad)), "boundary_points": len(B),
         "uncovered": int(len(uncovered))},
        witnesses,
        [FALSIFIER_NOTE, f"centers instantiated within |x| <= {spec.window} only",
         "g is deterministic"],
    )


def covering_preset(case: str, dimension: int = 2, window: float = 10.0, K: float = 1.0,
                    delta_hat: float = 1.0, C: float = 1.0, epsilon: float = 0.25,
                    T: float = 1.0, cover_samples: int = 20000):
    """Covering setups on the half-space ``{x1 >= 0}``.

    ``bounded``: coefficients of size ``K`` near the boundary, ``delta_n =
    delta_hat``, ``beta_hat = 1/2``, ``nu = 0``, ``C = K^2``.
    ``sublinear``: ``||sigma||, |b| = C(|x|^(1/2-epsilon) + 1)``, ``delta_n =
    |x_n| + 1``, ``beta_hat = 1/2``, ``nu = 1 - 2 epsilon`` and covering
    constant ``C^2 (2^(1+nu) + 2)``.
    Returns ``(spec, coefficients, domain)``.
    """
    domain = HalfSpace(np.eye(dimension)[0], 0.0, window=window * 1.5)
    pts = domain.boundary_sampler(cover_samples, 12345)
    pts = pts[np.linalg.norm(pts, axis=1) <= window * 1.2]
    beta = 0.5
    if case == "bounded":
        cf = make_preset("bounded_near_boundary", dimension, K=K, delta_hat=delta_hat)
        centers, radii = greedy_cover(pts, lambda P: np.full(len(P), delta_hat), beta)
        spec = CoveringSpec(centers, radii, delta_hat, beta, 0.0, K * K, T, window)
    elif case == "sublinear":
        cf = make_preset("sublinear", dimension, C=C, epsilon=epsilon)
        nu = 1.0 - 2.0 * epsilon
        centers, radii = greedy_cover(pts, lambda P: np.linalg.norm(P, axis=1) + 1.0, beta)
        spec = CoveringSpec(centers, radii, 1.0, beta, nu, C * C * (2.0 ** (1 + nu) + 2.0), T, window)
    else:
        raise ValueError(f"unknown covering case {case!r}")
    return spec, cf, domain


# ---------------------------------------------------------------------------
# Excursions
# ---------------------------------------------------------------------------

def excursion_diagnostic(sol: ReflectedSolution, spec: CoveringSpec,
                         domain: Optional[Domain] = None) -> Report:
    """Replay the ``(tau_k, n_k)`` bookkeeping on a grid path.

    ``U_n = B(x_n, beta delta_n)``, ``V_n = B(x_n, delta_n)`` for n >= 1;
    ``U_0``/``V_0`` hold the points farther than ``beta delta_n / 2``
    (resp. ``/ 3``) from every center.  ``n_k`` is the least n with
    ``X(tau_k) in U_n``; ``tau_{k+1}`` is the first later grid time outside
    ``V_{n_k}`` (or the end, with ``n_{k+1} = inf``).
    ``Sigma = {k : n_k >= 1 and tau_{k+1} < end}``.
    """
    X = sol.X.values
    grid = sol.X.grid
    end = len(X) - 1
    D = np.linalg.norm(X[:, None, :] - spec.centers[None, :, :], axis=2)  # (N+1, n)
    br = spec.beta_hat * spec.radii
    in_U0 = np.all(D > br / 2.0, axis=1)
    in_V0 = np.all(D > br / 3.0, axis=1)

    def first_U(j):
        if in_U0[j]:
            return 0
        hits = np.nonzero(D[j] < br)[0]
        return int(hits[0]) + 1 if len(hits) else None

    taus, ns = [0], [first_U(0)]
    notes = []
    while True:
        n = ns[-1]
        if n is None:
            notes.append("path left the instantiated covering window")
            break
        j0 = taus[-1]
        inside = in_V0[j0 + 1:] if n == 0 else D[j0 + 1:, n - 1] < spec.radii[n - 1]
        out = np.nonzero(~inside)[0]
        if len(out) == 0:
            taus.append(end)
            ns.append(math.inf)
            break
        j = j0 + 1 + int(out[0])
        taus.append(j)
        ns.append(first_U(j))
    sigma = [k for k in range(len(ns) - 1)
             if isinstance(ns[k], int) and ns[k] >= 1 and taus[k + 1] < end]
    return Report(
        "excursions",
        ns[-1] is not None,
        {"tau_k": [float(grid[j]) for j in taus],
         "n_k": [("inf" if n == math.inf else n) for n in ns],
         "sigma_count": len(sigma), "centers": len(spec.centers)},
        [],
        notes,
    )
