"""Closed domains in R^d: membership, projection, inward normals, and sampled
checks of the uniform exterior-sphere condition (A) and the uniform normal
cone condition (B).

All evaluators accept a single point of shape ``(d,)`` or a batch of shape
``(n, d)`` and hold no mutable state after construction, so one domain
object can be shared by any number of worker threads.
"""

from __future__ import annotations

import itertools
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linprog, nnls

from .reports import FALSIFIER_NOTE, Report

__all__ = [
    "DimensionError",
    "ProjectionError",
    "NotOnBoundaryError",
    "EmptyNeighborhoodError",
    "Domain",
    "HalfLine",
    "HalfSpace",
    "Box",
    "Ball",
    "Polytope",
    "Profile",
    "Tube",
    "NormalVector",
    "default_tol",
    "classify",
    "project",
    "inward_normal",
    "sample_normal_cone",
    "verify_normal",
    "verify_condition_A",
    "verify_condition_B",
    "saisho_constants",
]

INTERIOR, BOUNDARY, EXTERIOR = "interior", "boundary", "exterior"


class DimensionError(ValueError):
    pass


class ProjectionError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class NotOnBoundaryError(ValueError):
    pass


class EmptyNeighborhoodError(RuntimeError):
    pass


def default_tol(X: np.ndarray) -> np.ndarray:
    """Scale-aware boundary tolerance ``1e-9 * (1 + |x|)``."""
    return 1e-9 * (1.0 + np.linalg.norm(np.atleast_2d(X), axis=-1))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


def _uniform_ball(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    if d == 0:
        return np.zeros((n, 0))
    g = _unit(rng.standard_normal((n, d)))
    return g * rng.random((n, 1)) ** (1.0 / d)


def _uniform_sphere(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    bad = np.linalg.norm(g, axis=1) == 0
    g[bad, 0] = 1.0
    return _unit(g)


class Domain(ABC):
    """Closure of a domain D in R^d.

    ``window`` bounds where samplers look on unbounded domains; ``meta_r0``,
    ``meta_delta`` and ``meta_beta`` are the claimed (A)/(B) constants.
    """

    name = "domain"
    convex = True
    boundary_is_discrete = False

    def __init__(self, dimension: int, *, window: float = 10.0,
                 meta_r0: Optional[float] = None,
                 meta_delta: Optional[float] = None,
                 meta_beta: Optional[float] = None):
        if dimension < 1:
            raise DimensionError("dimension must be positive")
        self.dimension = int(dimension)
        self.window = float(window)
        self.meta_r0 = meta_r0
        self.meta_delta = meta_delta
        self.meta_beta = meta_beta

    # -- helpers -------------------------------------------------------------
    def _batch(self, x) -> tuple[np.ndarray, bool]:
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[-1] != self.dimension:
            raise DimensionError(
                f"point has dimension {X.shape[-1]}, domain has {self.dimension}")
        return X, single

    # -- per-type primitives (batch in, batch out) ---------------------------
    @abstractmethod
    def _inside(self, X: np.ndarray) -> np.ndarray:
        """Membership of the closure, exact (no tolerance)."""

    @abstractmethod
    def _project(self, X: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _nearest_boundary(self, X: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _normal_rays(self, x: np.ndarray, tol: float) -> np.ndarray:
        """Inward normal cone generators at a boundary point, shape (k, d)."""

    @abstractmethod
    def _sample_boundary(self, rng: np.random.Generator, count: int) -> np.ndarray:
        ...

    def _corners(self) -> np.ndarray:
        return np.zeros((0, self.dimension))

    # -- public API ----------------------------------------------------------
    def project(self, x):
        """Nearest point of the closure and the distance to it."""
        X, single = self._batch(x)
        P = X.copy()
        out = ~self._inside(X)
        if out.any():
            P[out] = self._project(X[out])
        dist = np.linalg.norm(P - X, axis=1)
        if single:
            return P[0], float(dist[0])
        return P, dist

    def boundary_distance(self, x):
        X, single = self._batch(x)
        d = np.linalg.norm(self._nearest_boundary(X) - X, axis=1)
        return float(d[0]) if single else d

    def nearest_boundary(self, x):
        X, single = self._batch(x)
        B = self._nearest_boundary(X)
        return B[0] if single else B

    def contains(self, x, tol=None):
        """True where the point lies in the closure up to ``tol``."""
        X, single = self._batch(x)
        tol = default_tol(X) if tol is None else np.broadcast_to(tol, (len(X),))
        ok = self._inside(X)
        if (~ok).any():
            dist = np.linalg.norm(self._project(X[~ok]) - X[~ok], axis=1)
            ok = ok.copy()
            ok[~ok] = dist <= tol[~ok]
        return bool(ok[0]) if single else ok

    def normal_cone_rays(self, x, tol=None) -> np.ndarray:
        X, _ = self._batch(x)
        x0 = X[0]
        tol = float(default_tol(x0)[0]) if tol is None else float(tol)
        return _unit(np.atleast_2d(self._normal_rays(x0, tol)))

    def boundary_sampler(self, count: int, seed: int = 0,
                         include_corners: bool = True) -> np.ndarray:
        """``count`` deterministic points of the boundary (corners first)."""
        rng = np.random.default_rng(seed)
        corners = self._corners() if include_corners else np.zeros((0, self.dimension))
        corners = corners[:count]
        rest = count - len(corners)
        pts = self._sample_boundary(rng, rest) if rest > 0 else np.zeros((0, self.dimension))
        return np.vstack([corners, pts])

    def sample_closure(self, count: int, rng: np.random.Generator,
                       center=None, radius: Optional[float] = None) -> np.ndarray:
        """Points of the closure near ``center``; rejected draws are projected."""
        c = np.zeros(self.dimension) if center is None else np.asarray(center, float)
        rad = self.window if radius is None else float(radius)
        P = c + rad * _uniform_ball(rng, count, self.dimension)
        out = ~self._inside(P)
        if out.any():
            P[out] = self._project(P[out])
        return P

    def local_samples(self, x, count: int, rng: np.random.Generator) -> np.ndarray:
        """Closure points around ``x`` on logarithmically spaced scales, with
        their nearest boundary points and ``x`` itself in row 0."""
        x = np.asarray(x, float)
        radii = np.geomspace(1e-4, 2.0 * self.window, 8)
        per = max(1, count // (2 * len(radii)))
        chunks = [x[None, :]]
        for r in radii:
            P = self.sample_closure(per, rng, center=x, radius=r)
            chunks.append(P)
            chunks.append(self._nearest_boundary(P))
        return np.vstack(chunks)

    def describe(self) -> dict:
        return {"type": self.name, "dimension": self.dimension}


class HalfSpace(Domain):
    """``{x : <a, x> >= c}`` with unit ``a``."""

    name = "halfspace"

    def __init__(self, normal, offset: float = 0.0, **kw):
        a = np.asarray(normal, float).ravel()
        super().__init__(len(a), **kw)
        norm = np.linalg.norm(a)
        if norm == 0:
            raise ValueError("half-space normal must be nonzero")
        self.a = a / norm
        self.c = float(offset) / norm

    def _inside(self, X):
        return X @ self.a >= self.c

    def _project(self, X):
        return X + np.maximum(0.0, self.c - X @ self.a)[:, None] * self.a

    def _nearest_boundary(self, X):
        return X + (self.c - X @ self.a)[:, None] * self.a

    def _normal_rays(self, x, tol):
        return self.a[None, :]

    def _sample_boundary(self, rng, count):
        d = self.dimension
        base = self.c * self.a
        if d == 1:
            return np.tile(base, (count, 1))
        G = rng.standard_normal((count, d))
        G -= (G @ self.a)[:, None] * self.a
        G = _unit(G) * self.window * rng.random((count, 1)) ** (1.0 / (d - 1))
        return base + G

    def describe(self):
        return {"type": self.name, "normal": self.a.tolist(), "offset": self.c}


class HalfLine(HalfSpace):
    """``[lower, inf)`` in one dimension."""

    name = "halfline"
    boundary_is_discrete = True

    def __init__(self, lower: float = 0.0, **kw):
        super().__init__([1.0], float(lower), **kw)

    def describe(self):
        return {"type": self.name, "lower": self.c}


class Box(Domain):
    name = "box"

    def __init__(self, lower, upper, **kw):
        lo = np.asarray(lower, float).ravel()
        hi = np.asarray(upper, float).ravel()
        if lo.shape != hi.shape or not np.all(hi > lo):
            raise ValueError("box needs lower < upper componentwise")
        kw.setdefault("window", float(np.max(hi - lo)))
        super().__init__(len(lo), **kw)
        self.lower, self.upper = lo, hi

    def _inside(self, X):
        return np.all((X >= self.lower) & (X <= self.upper), axis=1)

    def _project(self, X):
        return np.clip(X, self.lower, self.upper)

    def _nearest_boundary(self, X):
        P = np.clip(X, self.lower, self.upper)
        inside = self._inside(X)
        if inside.any():
            Y = X[inside]
            slack = np.concatenate([Y - self.lower, self.upper - Y], axis=1)
            j = np.argmin(slack, axis=1)
            rows = np.arange(len(Y))
            coord = j % self.dimension
            Y = Y.copy()
            Y[rows, coord] = np.where(j < self.dimension,
                                      self.lower[coord], self.upper[coord])
            P[inside] = Y
        return P

    def _normal_rays(self, x, tol):
        eye = np.eye(self.dimension)
        rays = [eye[i] for i in range(self.dimension) if abs(x[i] - self.lower[i]) <= tol]
        rays += [-eye[i] for i in range(self.dimension) if abs(self.upper[i] - x[i]) <= tol]
        if not rays:
            raise NotOnBoundaryError(f"{x} is not on the box boundary")
        return np.array(rays)

    def _corners(self):
        return np.array(list(itertools.product(*zip(self.lower, self.upper))), float)

    def _sample_boundary(self, rng, count):
        d = self.dimension
        side = self.upper - self.lower
        areas = np.array([np.prod(np.delete(side, i)) for i in range(d)] * 2)
        face = rng.choice(2 * d, size=count, p=areas / areas.sum())
        P = self.lower + rng.random((count, d)) * side
        rows = np.arange(count)
        coord = face % d
        P[rows, coord] = np.where(face < d, self.lower[coord], self.upper[coord])
        return P

    def describe(self):
        return {"type": self.name, "lower": self.lower.tolist(), "upper": self.upper.tolist()}


class Ball(Domain):
    name = "ball"

    def __init__(self, center=None, radius: float = 1.0, dimension: int = 2, **kw):
        c = np.zeros(dimension) if center is None else np.asarray(center, float).ravel()
        kw.setdefault("window", 2.0 * radius)
        super().__init__(len(c), **kw)
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.center, self.radius = c, float(radius)

    def _inside(self, X):
        return np.linalg.norm(X - self.center, axis=1) <= self.radius

    def _radial(self, X):
        V = X - self.center
        n = np.linalg.norm(V, axis=1, keepdims=True)
        e1 = np.zeros(self.dimension)
        e1[0] = 1.0
        U = np.where(n > 0, V / np.where(n > 0, n, 1.0), e1)
        return self.center + self.radius * U

    _project = _radial
    _nearest_boundary = _radial

    def _normal_rays(self, x, tol):
        return ((self.center - x) / self.radius)[None, :]

    def _sample_boundary(self, rng, count):
        return self.center + self.radius * _uniform_sphere(rng, count, self.dimension)

    def describe(self):
        return {"type": self.name, "center": self.center.tolist(), "radius": self.radius}


class Polytope(Domain):
    """``{x : A x <= b}``; rows of ``A`` are normalised to unit length.

    Projection is the least-distance program solved through non-negative
    least squares (Lawson-Hanson).
    """

    name = "polytope"

    def __init__(self, A, b, **kw):
        A = np.atleast_2d(np.asarray(A, float))
        b = np.asarray(b, float).ravel()
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0) or len(b) != len(A):
            raise ValueError("polytope rows must be nonzero and match b")
        super().__init__(A.shape[1], **kw)
        self.A, self.b = A / norms[:, None], b / norms
        self._interior = self._chebyshev_center()

    def _chebyshev_center(self) -> np.ndarray:
        d = self.dimension
        c = np.zeros(d + 1)
        c[-1] = -1.0
        A_ub = np.hstack([self.A, np.ones((len(self.A), 1))])
        bounds = [(-self.window, self.window)] * d + [(0, None)]
        res = linprog(c, A_ub=A_ub, b_ub=self.b, bounds=bounds, method="highs")
        if not res.success or res.x[-1] <= 0:
            raise ValueError("polytope has empty interior inside the sampling window")
        return res.x[:d]

    def _inside(self, X):
        return np.all(X @ self.A.T <= self.b, axis=1)

    def _project_one(self, x):
        # min |z| s.t. A z <= b - A x, as the LDP of Lawson & Hanson via NNLS
        G, h = -self.A, self.A @ x - self.b
        E = np.vstack([G.T, h[None, :]])
        f = np.zeros(self.dimension + 1)
        f[-1] = 1.0
        u, _ = nnls(E, f, maxiter=50 * len(self.b))
        r = E @ u - f
        if abs(r[-1]) < 1e-14:
            raise ProjectionError("least-distance program infeasible", float(np.linalg.norm(r)))
        z = -r[:-1] / r[-1]
        p = x + z
        # polish: exact projection onto the active faces when it stays feasible
        act = self.A @ p - self.b > -1e-9 * (1 + np.linalg.norm(p))
        if act.any():
            Aa = self.A[act]
            q = x - Aa.T @ np.linalg.lstsq(Aa @ Aa.T, Aa @ x - self.b[act], rcond=None)[0]
            if np.all(self.A @ q - self.b <= 1e-12 * (1 + np.linalg.norm(q))) and \
                    np.linalg.norm(q - p) <= 1e-8 * (1 + np.linalg.norm(p)):
                p = q
        viol = float(np.max(self.A @ p - self.b))
        if viol > 1e-9 * (1 + np.linalg.norm(p)):
            raise ProjectionError("NNLS projection left a constraint violated", viol)
        return p

    def _project(self, X):
        return np.array([self._project_one(x) for x in X])

    def _nearest_boundary(self, X):
        P = np.empty_like(X)
        inside = self._inside(X)
        if (~inside).any():
            P[~inside] = self._project(X[~inside])
        if inside.any():
            Y = X[inside]
            slack = self.b - Y @ self.A.T
            j = np.argmin(slack, axis=1)
            P[inside] = Y + slack[np.arange(len(Y)), j][:, None] * self.A[j]
        return P

    def _normal_rays(self, x, tol):
        active = np.abs(self.A @ x - self.b) <= tol
        if not active.any():
            raise NotOnBoundaryError(f"{x} is not on the polytope boundary")
        return -self.A[active]

    def _corners(self):
        d = self.dimension
        verts = []
        for rows in itertools.combinations(range(len(self.b)), d):
            M = self.A[list(rows)]
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            v = np.linalg.solve(M, self.b[list(rows)])
            if np.all(self.A @ v <= self.b + 1e-9 * (1 + np.abs(self.b))):
                if not any(np.allclose(v, w) for w in verts):
                    verts.append(v)
        return np.array(verts) if verts else np.zeros((0, d))

    def _sample_boundary(self, rng, count):
        out = []
        c = self._interior
        while sum(len(o) for o in out) < count:
            n = count
            U = _uniform_sphere(rng, n, self.dimension)
            AU = U @ self.A.T
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(AU > 0, (self.b - self.A @ c)[None, :] / AU, np.inf)
            t = t.min(axis=1)
            ok = np.isfinite(t) & (t <= 2 * self.window)
            out.append(c + t[ok, None] * U[ok])
        return np.vstack(out)[:count]

    def describe(self):
        return {"type": self.name, "A": self.A.tolist(), "b": self.b.tolist()}


@dataclass(frozen=True)
class Profile:
    """Radius profile ``H`` on ``[-1, inf)`` with its first two derivatives."""

    H: Callable[[np.ndarray], np.ndarray]
    dH: Callable[[np.ndarray], np.ndarray]
    d2H: Callable[[np.ndarray], np.ndarray]
    label: str = "custom"

    @classmethod
    def linear(cls, slope: float = 1.0) -> "Profile":
        k = float(slope)
        return cls(lambda s: k * (np.asarray(s, float) + 1.0),
                   lambda s: np.full(np.shape(s), k),
                   lambda s: np.zeros(np.shape(s)),
                   label=f"{k}*(s+1)")

    @classmethod
    def from_expression(cls, H: str, dH: Optional[str] = None,
                        d2H: Optional[str] = None, step: float = 1e-5) -> "Profile":
        from .expr import compile_expression

        h = compile_expression(H, ["s"])
        f = lambda s: h(s=np.asarray(s, float))
        if dH is not None:
            g1 = compile_expression(dH, ["s"])
            df = lambda s: g1(s=np.asarray(s, float))
        else:
            df = lambda s: (f(np.asarray(s) + step) - f(np.asarray(s) - step)) / (2 * step)
        if d2H is not None:
            g2 = compile_expression(d2H, ["s"])
            d2f = lambda s: g2(s=np.asarray(s, float))
        else:
            d2f = lambda s: (f(np.asarray(s) + step) - 2 * f(s) + f(np.asarray(s) - step)) / step**2
        return cls(f, df, d2f, label=H)


class Tube(Domain):
    """``{x : x1 >= -1, |x~| <= H(x1)}`` with ``H(-1) = 0``.

    The nearest boundary point is found on the one-dimensional profile
    curve: a 65-point scan picks a bracket (ties go to the smallest
    parameter), golden-section search narrows it and Newton steps polish.
    """

    name = "tube"
    convex = False
    _SCAN = 65
    _GOLDEN_ITERS = 90

    def __init__(self, profile: Profile, dimension: int = 2, **kw):
        if dimension < 2:
            raise DimensionError("tube domains need d >= 2")
        super().__init__(dimension, **kw)
        self.profile = profile
        if abs(float(profile.H(np.array([-1.0]))[0])) > 1e-12:
            raise ValueError("tube profile must vanish at s = -1")
        self.apex = np.zeros(dimension)
        self.apex[0] = -1.0

    def _split(self, X):
        a = X[:, 0]
        rho = np.linalg.norm(X[:, 1:], axis=1)
        return a, rho

    def _inside(self, X):
        a, rho = self._split(X)
        ok = a >= -1.0
        Hs = np.zeros_like(a)
        Hs[ok] = self.profile.H(a[ok])
        return ok & (rho <= Hs)

    def _objective(self, s, a, rho):
        return (s - a) ** 2 + (self.profile.H(s) - rho) ** 2

    def _curve_param(self, a, rho):
        """Parameter of the nearest profile point for each ``(a, rho)``."""
        n = len(a)
        hi = a + np.hypot(a + 1.0, rho) + 1e-12
        hi = np.maximum(hi, -1.0 + 1e-12)
        grid = -1.0 + (hi + 1.0)[:, None] * np.linspace(0.0, 1.0, self._SCAN)[None, :]
        F = self._objective(grid, a[:, None], rho[:, None])
        j = np.argmin(F, axis=1)
        rows = np.arange(n)
        lo_b = grid[rows, np.maximum(j - 1, 0)]
        hi_b = grid[rows, np.minimum(j + 1, self._SCAN - 1)]
        invphi = (math.sqrt(5.0) - 1.0) / 2.0
        x1 = hi_b - invphi * (hi_b - lo_b)
        x2 = lo_b + invphi * (hi_b - lo_b)
        f1 = self._objective(x1, a, rho)
        f2 = self._objective(x2, a, rho)
        for _ in range(self._GOLDEN_ITERS):
            left = f1 <= f2
            hi_b = np.where(left, x2, hi_b)
            lo_b = np.where(left, lo_b, x1)
            x2n = np.where(left, x1, lo_b + invphi * (hi_b - lo_b))
            x1n = np.where(left, hi_b - invphi * (hi_b - lo_b), x2)
            x1, x2 = x1n, x2n
            f1 = self._objective(x1, a, rho)
            f2 = self._objective(x2, a, rho)
        s = 0.5 * (lo_b + hi_b)
        bracket_lo = grid[rows, np.maximum(j - 1, 0)]
        bracket_hi = grid[rows, np.minimum(j + 1, self._SCAN - 1)]
        H, dH, d2H = self.profile.H, self.profile.dH, self.profile.d2H
        for _ in range(3):
            r = H(s) - rho
            g = 2.0 * (s - a) + 2.0 * r * dH(s)
            h = 2.0 + 2.0 * dH(s) ** 2 + 2.0 * r * d2H(s)
            with np.errstate(divide="ignore", invalid="ignore"):
                cand = np.where(h > 0, s - g / h, s)
            cand = np.clip(cand, bracket_lo, bracket_hi)
            better = self._objective(cand, a, rho) <= self._objective(s, a, rho)
            s = np.where(better, cand, s)
        f_apex = (a + 1.0) ** 2 + rho**2
        use_apex = f_apex <= self._objective(s, a, rho)
        s = np.where(use_apex, -1.0, s)
        interior = s > -1.0
        if interior.any():
            si = s[interior]
            r = H(si) - rho[interior]
            grad = 2.0 * (si - a[interior]) + 2.0 * r * dH(si)
            scale = 1.0 + np.abs(a[interior]) + rho[interior]
            res = np.abs(grad) / scale
            edge = (np.isclose(si, bracket_lo[interior]) | np.isclose(si, bracket_hi[interior]))
            bad = (res > 1e-6) & ~edge
            if bad.any():
                raise ProjectionError("tube nearest-point search did not converge",
                                      float(res[bad].max()))
        return s

    def _curve_point(self, X):
        a, rho = self._split(X)
        s = self._curve_param(a, rho)
        tilde = X[:, 1:]
        e = np.zeros(self.dimension - 1)
        e[0] = 1.0
        U = np.where(rho[:, None] > 0, tilde / np.where(rho > 0, rho, 1.0)[:, None], e)
        P = np.empty_like(X)
        P[:, 0] = s
        P[:, 1:] = self.profile.H(s)[:, None] * U
        return P

    _project = _curve_point
    _nearest_boundary = _curve_point

    def _normal_rays(self, x, tol):
        if abs(x[0] + 1.0) <= tol:
            return self._apex_cone()
        rho = np.linalg.norm(x[1:])
        if abs(rho - float(self.profile.H(np.array([x[0]]))[0])) > max(tol, 1e-7 * (1 + rho)):
            raise NotOnBoundaryError(f"{x} is not on the tube boundary")
        hp = float(self.profile.dH(np.array([x[0]]))[0])
        n = np.empty(self.dimension)
        n[0] = hp
        n[1:] = -x[1:] / rho
        return (n / math.sqrt(hp * hp + 1.0))[None, :]

    def _apex_cone(self, probes: int = 512) -> np.ndarray:
        """Directions ``u`` whose probe ``apex - h u`` projects back to the apex."""
        rng = np.random.default_rng(0)
        U = _uniform_sphere(rng, probes, self.dimension)
        h = 1e-3
        P = self._curve_point(self.apex - h * U)
        keep = np.linalg.norm(P - self.apex, axis=1) <= 1e-9
        rays = U[keep]
        if len(rays) == 0:
            e1 = np.zeros(self.dimension)
            e1[0] = 1.0
            rays = e1[None, :]
        return rays

    def is_corner(self, x, tol=None) -> bool:
        x = np.asarray(x, float)
        tol = float(default_tol(x)[0]) if tol is None else tol
        return abs(x[0] + 1.0) <= tol

    def _corners(self):
        return self.apex[None, :]

    def _sample_boundary(self, rng, count):
        s = -1.0 + (self.window + 1.0) * rng.random(count)
        U = _uniform_sphere(rng, count, self.dimension - 1)
        P = np.empty((count, self.dimension))
        P[:, 0] = s
        P[:, 1:] = self.profile.H(s)[:, None] * U
        return P

    def describe(self):
        return {"type": self.name, "dimension": self.dimension, "H": self.profile.label}


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def classify(domain: Domain, x, tol: Optional[float] = None) -> str:
    """``interior``, ``boundary`` or ``exterior`` for one point."""
    X, _ = domain._batch(x)
    if X.shape[0] != 1:
        raise DimensionError("classify takes a single point")
    t = float(default_tol(X)[0]) if tol is None else float(tol)
    if t <= 0:
        raise ValueError("tol must be positive")
    if domain.boundary_distance(X)[0] <= t:
        return BOUNDARY
    return INTERIOR if bool(domain._inside(X)[0]) else EXTERIOR


def project(domain: Domain, x):
    return domain.project(x)


@dataclass
class NormalVector:
    base_point: np.ndarray
    direction: np.ndarray
    radius: float
    unique: bool = True
    rays: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.base_point = np.asarray(self.base_point, float)
        v = np.asarray(self.direction, float)
        self.direction = v / np.linalg.norm(v)


def inward_normal(domain: Domain, x, tol: Optional[float] = None) -> NormalVector:
    """One inward unit normal at a boundary point.

    Where the normal cone is not a single ray (box/polytope corners, the tube
    apex) the normalised mean of the cone generators is returned and
    ``unique`` is False; the generators are kept in ``rays``.
    """
    x = np.asarray(x, float)
    if classify(domain, x, tol) != BOUNDARY:
        raise NotOnBoundaryError(f"{x.tolist()} is not on the boundary")
    rays = domain.normal_cone_rays(x, tol)
    direction = rays[0] if len(rays) == 1 else rays.mean(axis=0)
    if np.linalg.norm(direction) < 1e-12:
        direction = rays[0]
    return NormalVector(x, direction, domain.meta_r0 or 1.0,
                        unique=len(rays) == 1, rays=rays)


def sample_normal_cone(rays: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """The generators themselves plus normalised random convex combinations."""
    rays = np.atleast_2d(rays)
    if len(rays) == 1 or count <= 0:
        return rays.copy()
    w = rng.dirichlet(np.ones(len(rays)), size=count)
    return np.vstack([rays, _unit(w @ rays)])


def _exterior_ball_margins(x, normals, ys, r):
    """``<y - x, n> + |y - x|^2 / (2 r)`` for every (normal, y) pair."""
    D = ys - x
    return D @ np.atleast_2d(normals).T + (np.sum(D * D, axis=1) / (2.0 * r))[:, None]


def verify_normal(domain: Domain, nv: NormalVector, r: float, sample_count: int = 2000,
                  seed: int = 0, tol: float = 1e-9, ys: Optional[np.ndarray] = None) -> Report:
    """Falsify ``nv.direction in N_{x,r}`` through the exterior-ball inequality."""
    if r <= 0:
        raise ValueError("r must be positive")
    x = nv.base_point
    if ys is None:
        ys = domain.local_samples(x, sample_count, np.random.default_rng(seed))
    else:
        ys = np.vstack([x[None, :], np.atleast_2d(ys)])
    m = _exterior_ball_margins(x, nv.direction, ys, r)[:, 0]
    i = int(np.argmin(m))
    passed = bool(m[i] >= -tol)
    return Report(
        "normal_vector",
        passed,
        {"worst_margin": float(m[i]), "radius": r, "samples": len(ys), "tol": tol},
        [{"y": ys[i], "x": x, "n": nv.direction, "margin": float(m[i])}],
        [FALSIFIER_NOTE],
    )


def verify_condition_A(domain: Domain, r0: float, boundary_samples: int = 200,
                       probe_samples: int = 400, seed: int = 0,
                       cone_samples: int = 8, tol: float = 1e-9) -> Report:
    """At sampled boundary points, every sampled normal-cone direction must
    satisfy the exterior-ball inequality at radius ``r0``."""
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    rng = np.random.default_rng(seed)
    pts = domain.boundary_sampler(boundary_samples, seed)
    worst, witness, failures, checked = math.inf, None, [], 0
    for x in pts:
        rays = domain.normal_cone_rays(x)
        normals = sample_normal_cone(rays, cone_samples, rng)
        ys = domain.local_samples(x, probe_samples, rng)
        M = _exterior_ball_margins(x, normals, ys, r0)
        checked += normals.shape[0]
        i, j = np.unravel_index(np.argmin(M), M.shape)
        if M[i, j] < worst:
            worst = float(M[i, j])
            witness = {"x": x, "n": normals[j], "y": ys[i], "margin": worst}
        if M[i, j] < -tol:
            failures.append({"x": x, "n": normals[j], "y": ys[i], "margin": float(M[i, j])})
    return Report(
        "condition_A",
        not failures,
        {"r0": r0, "boundary_points": len(pts), "normals_checked": checked,
         "worst_margin": worst, "failures": len(failures)},
        failures[:20] if failures else ([witness] if witness else []),
        [FALSIFIER_NOTE,
         "only non-emptiness of N_{x,r0} is tested; the set equality N_x = N_{x,r0} is not checkable"],
    )


def _min_norm_in_hull(N: np.ndarray, iters: int = 5000) -> np.ndarray:
    """Minimum-norm point of conv(rows of N) via projected gradient on the simplex."""
    k = len(N)
    w = np.full(k, 1.0 / k)
    if k == 1:
        return N[0]
    G = N @ N.T
    L = 2.0 * max(np.linalg.eigvalsh(G).max(), 1e-12)
    for _ in range(iters):
        w_new = _simplex_projection(w - (2.0 * G @ w) / L)
        if np.max(np.abs(w_new - w)) < 1e-15:
            w = w_new
            break
        w = w_new
    return w @ N


def _simplex_projection(y: np.ndarray) -> np.ndarray:
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.nonzero(u - css / np.arange(1, len(y) + 1) > 0)[0][-1]
    return np.maximum(y - css[k] / (k + 1.0), 0.0)


def verify_condition_B(domain: Domain, delta: float, beta: float,
                       boundary_samples: int = 100, seed: int = 0,
                       neighbor_samples: int = 64, tol: float = 1e-9) -> Report:
    """Search a direction ``l_x`` meeting every nearby normal at angle
    ``<= arccos(1/beta)``.

    ``l_x`` is the direction of the minimum-norm point of the convex hull of
    the distinct sampled normals, which maximises the smallest inner product.
    """
    if delta <= 0 or beta < 1:
        raise ValueError("need delta > 0 and beta >= 1")
    rng = np.random.default_rng(seed)
    pts = domain.boundary_sampler(boundary_samples, seed)
    per_point, failures = [], []
    worst = math.inf
    for x in pts:
        cand = x + delta * _uniform_ball(rng, neighbor_samples, domain.dimension)
        nb = domain.nearest_boundary(cand)
        nb = nb[np.linalg.norm(nb - x, axis=1) < delta]
        if len(nb) == 0 and not domain.boundary_is_discrete:
            raise EmptyNeighborhoodError(
                f"no boundary samples within delta={delta} of {x.tolist()}")
        normals = [domain.normal_cone_rays(x)]
        for y in nb:
            normals.append(domain.normal_cone_rays(y))
        N = np.unique(np.round(np.vstack(normals), 12), axis=0)
        N = _unit(N)
        p = _min_norm_in_hull(N)
        if np.linalg.norm(p) < 1e-12:
            l = _unit(N.mean(axis=0))
        else:
            l = p / np.linalg.norm(p)
        ip = N @ l
        k = int(np.argmin(ip))
        worst = min(worst, float(ip[k]))
        per_point.append({"x": x, "l_x": l, "min_inner_product": float(ip[k]),
                          "normals": len(N)})
        if ip[k] < 1.0 / beta - tol:
            failures.append({"x": x, "l_x": l, "n": N[k], "inner_product": float(ip[k])})
    return Report(
        "condition_B",
        not failures,
        {"delta": delta, "beta": beta, "threshold": 1.0 / beta,
         "worst_inner_product": worst, "boundary_points": len(pts),
         "failures": len(failures)},
        failures[:20] if failures else per_point[:5],
        [FALSIFIER_NOTE],
    )


def saisho_constants(theta: float, r0: float, beta: float, delta: float) -> tuple[float, float]:
    """Constants ``(C1, C2)`` of the total-variation bound for reflected paths.

    >>> c1, c2 = saisho_constants(1.0, 1.0, 1.0, 1.0)
    >>> round(c1 / math.e**2, 9), c2
    (624.0, 2.0)
    """
    if not (0 < theta <= 1):
        raise ValueError("theta must lie in (0, 1]")
    if r0 <= 0 or delta <= 0:
        raise ValueError("r0 and delta must be positive")
    if beta < 1:
        raise ValueError("beta must be >= 1")
    c1 = (24.0 * beta * (1.0 + beta)
          * ((4.0 / delta * (beta + 2.0)) ** (1.0 / theta) + 1.0)
          * math.exp(beta * delta * (1.0 + 1.0 / delta) / r0))
    c2 = (1.0 + 1.0 / delta) * beta / r0
    return c1, c2
