"""Coefficient fields, Osgood moduli, growth functions and sampled checkers
for the regularity and growth hypotheses on sigma and b."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .expr import ExpressionError, compile_expression
from .geometry import Domain
from .reports import FALSIFIER_NOTE, Report

__all__ = [
    "CoefficientField",
    "ModulusLambda",
    "GrowthGamma",
    "QuadratureResult",
    "OsgoodError",
    "adaptive_simpson",
    "osgood_partial_integral",
    "osgood_diagnose",
    "default_ladder",
    "phi_r",
    "psi",
    "max_with_identity",
    "check_regularity",
    "check_growth",
    "localize",
    "PRESETS",
    "make_preset",
    "list_presets",
    "from_expressions",
]

LOG_CLIP = 1e-12
_EPS = np.finfo(float).eps

Evaluator = Callable[[float, np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# Coefficient fields
# ---------------------------------------------------------------------------

def _as_g(g) -> Callable[[float], float]:
    if callable(g):
        return g
    value = float(g)
    if value < 0:
        raise ValueError("g must be nonnegative")
    return lambda t: value


@dataclass
class CoefficientField:
    """``sigma(t, X) -> (n, d, d)`` and ``b(t, X) -> (n, d)`` on batches ``X`` of shape ``(n, d)``.

    When ``sigma_scalar`` is given, sigma is ``sigma_scalar(t, X)[:, None, None] * I``
    and the simulator uses the cheaper scalar form.  ``g`` is a deterministic
    function of t (or a constant).
    """

    dimension: int
    b: Evaluator
    sigma: Optional[Evaluator] = None
    sigma_scalar: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    g: Union[float, Callable[[float], float]] = 1.0
    gamma_id: Optional[str] = None
    preset_id: Optional[str] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sigma is None and self.sigma_scalar is None:
            raise ValueError("either sigma or sigma_scalar is required")
        self._g = _as_g(self.g)

    def g_at(self, t) -> float:
        return float(self._g(t))

    def sigma_at(self, t: float, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        if self.sigma is not None:
            return np.asarray(self.sigma(t, X), float).reshape(len(X), self.dimension, self.dimension)
        s = np.broadcast_to(np.asarray(self.sigma_scalar(t, X), float), (len(X),))
        return s[:, None, None] * np.eye(self.dimension)

    def b_at(self, t: float, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        return np.broadcast_to(np.asarray(self.b(t, X), float), X.shape).copy()

    def sigma_norm2(self, t: float, X) -> np.ndarray:
        """Squared Hilbert-Schmidt norm per point."""
        X = np.atleast_2d(np.asarray(X, float))
        if self.sigma is None:
            s = np.broadcast_to(np.asarray(self.sigma_scalar(t, X), float), (len(X),))
            return self.dimension * s * s
        S = self.sigma_at(t, X)
        return np.sum(S * S, axis=(1, 2))

    def describe(self) -> dict:
        return {"preset": self.preset_id, "dimension": self.dimension,
                "params": dict(self.params), "gamma": self.gamma_id,
                "g_deterministic": True}


def _norm(X):
    return np.linalg.norm(X, axis=1)


def _zero_b(t, X):
    return np.zeros_like(X)


def _preset_zero(d, **_):
    return CoefficientField(d, _zero_b, sigma_scalar=lambda t, X: np.zeros(len(X)), g=0.0)


def _preset_brownian(d, **_):
    return CoefficientField(d, _zero_b, sigma_scalar=lambda t, X: np.ones(len(X)), g=0.0,
                            gamma_id="linear")


def _preset_ou(d, rate: float = 1.0, **_):
    return CoefficientField(d, lambda t, X: -rate * X, sigma_scalar=lambda t, X: np.ones(len(X)),
                            g=0.0, gamma_id="linear")


def _loglip_b(t, X):
    r = np.maximum(_norm(X), LOG_CLIP)
    return X * np.log(1.0 / r)[:, None]


def _preset_loglip(d, **_):
    # On [0, inf) the worst pair is (h, 0) where the bound is attained with g = 1.
    return CoefficientField(d, _loglip_b, sigma_scalar=lambda t, X: np.ones(len(X)), g=1.0,
                            gamma_id="slog")


def _preset_linear(d, rate: float = 1.0, **_):
    return CoefficientField(d, lambda t, X: rate * X, sigma_scalar=lambda t, X: np.ones(len(X)),
                            g=2.0 * rate + d, gamma_id="linear")


def _preset_quadratic(d, **_):
    return CoefficientField(d, lambda t, X: _norm(X)[:, None] * X,
                            sigma_scalar=lambda t, X: np.zeros(len(X)), g=1.0)


def _preset_sqrt_sigma(d, **_):
    return CoefficientField(d, _zero_b,
                            sigma_scalar=lambda t, X: np.sqrt(np.minimum(_norm(X), 1.0)), g=1.0)


def _h_loglinear(r):
    return r * np.sqrt(np.log1p(r)) + 1.0


def _preset_loglinear(d, C: float = 1.0, **_):
    """``||sigma||_HS = C h(|x|)`` and ``|b| <= C h(|x|)`` with ``h(r) = r sqrt(log(1+r)) + 1``."""
    return CoefficientField(
        d,
        lambda t, X: C * np.sqrt(np.log1p(_norm(X)))[:, None] * X,
        sigma_scalar=lambda t, X: C * _h_loglinear(_norm(X)) / math.sqrt(d),
        g=8.0 * d * C * C + 4.0 * C,
        gamma_id="slog",
        params={"C": C},
    )


def _preset_bounded_near_boundary(d, K: float = 1.0, delta_hat: float = 1.0, **_):
    """Half-space ``{x1 >= 0}``: coefficients of size ``K`` within ``delta_hat`` of the boundary.

    ``s(x) = K + max(0, x1 - delta_hat) sqrt(log(1 + |x|))`` is both
    ``||sigma||_HS`` and ``|b|``.
    """
    def s(X):
        return K + np.maximum(0.0, X[:, 0] - delta_hat) * np.sqrt(np.log1p(_norm(X)))

    def b(t, X):
        out = np.zeros_like(X)
        out[:, 0] = s(X)
        return out

    return CoefficientField(d, b, sigma_scalar=lambda t, X: s(X) / math.sqrt(d),
                            g=2.0 * K * K + 2.0, params={"K": K, "delta_hat": delta_hat})


def _preset_sublinear(d, C: float = 1.0, epsilon: float = 0.25, **_):
    """``||sigma||_HS = |b| = C (|x|^p + 1)`` with ``p = 1/2 - epsilon``."""
    p = 0.5 - epsilon

    def s(X):
        return C * (_norm(X) ** p + 1.0)

    def b(t, X):
        out = np.zeros_like(X)
        out[:, 0] = s(X)
        return out

    return CoefficientField(d, b, sigma_scalar=lambda t, X: s(X) / math.sqrt(d), g=4.0 * C * C,
                            gamma_id="linear", params={"C": C, "epsilon": epsilon})


PRESETS: dict[str, tuple[Callable[..., CoefficientField], str]] = {
    "zero": (_preset_zero, "sigma = 0, b = 0"),
    "brownian": (_preset_brownian, "sigma = I, b = 0"),
    "ou": (_preset_ou, "sigma = I, b = -rate x (Lipschitz)"),
    "loglip": (_preset_loglip, "sigma = I, b = x log(1/|x|) clipped at 1e-12 (log-Lipschitz)"),
    "linear": (_preset_linear, "sigma = I, b = rate x (linear growth)"),
    "quadratic": (_preset_quadratic, "sigma = 0, b = |x| x (superlinear, explodes)"),
    "sqrt_sigma": (_preset_sqrt_sigma, "sigma = sqrt(min(|x|, 1)) I, b = 0 (Holder-1/2)"),
    "loglinear": (_preset_loglinear, "||sigma||, |b| <= C(|x| sqrt(log(1+|x|)) + 1)"),
    "bounded_near_boundary": (_preset_bounded_near_boundary,
                              "size K near {x1 = 0}, log-linear growth further in"),
    "sublinear": (_preset_sublinear, "||sigma||, |b| = C(|x|^(1/2 - epsilon) + 1)"),
}


def list_presets() -> list[str]:
    return sorted(PRESETS)


def make_preset(name: str, dimension: int, **params) -> CoefficientField:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    cf = PRESETS[name][0](int(dimension), **params)
    cf.preset_id = name
    cf.params = {**cf.params, **params}
    return cf


def from_expressions(dimension: int, b: Sequence[str],
                     sigma: Union[str, Sequence[str], Sequence[Sequence[str]]],
                     g: Union[float, str] = 1.0) -> CoefficientField:
    """Coefficients from expression strings over ``t, x1..xd``.

    ``sigma`` is a scalar (times I), a list of d diagonal entries, or a d x d
    list of rows.
    """
    d = int(dimension)
    names = ["t"] + [f"x{i + 1}" for i in range(d)]
    if len(b) != d:
        raise ExpressionError(f"b needs {d} components")
    bf = [compile_expression(e, names) for e in b]

    def env(t, X):
        return {"t": t, **{f"x{i + 1}": X[:, i] for i in range(d)}}

    def b_eval(t, X):
        e = env(t, X)
        return np.stack([np.broadcast_to(f(**e), (len(X),)) for f in bf], axis=1)

    kw = {}
    if isinstance(sigma, str):
        sf = compile_expression(sigma, names)
        kw["sigma_scalar"] = lambda t, X: np.broadcast_to(sf(**env(t, X)), (len(X),))
    else:
        rows = list(sigma)
        if rows and all(isinstance(r, str) for r in rows):
            if len(rows) != d:
                raise ExpressionError(f"diagonal sigma needs {d} entries")
            diag = [compile_expression(e, names) for e in rows]

            def s_eval(t, X):
                e = env(t, X)
                S = np.zeros((len(X), d, d))
                for i, f in enumerate(diag):
                    S[:, i, i] = f(**e)
                return S
        else:
            if len(rows) != d or any(len(r) != d for r in rows):
                raise ExpressionError(f"sigma must be {d} x {d}")
            full = [[compile_expression(e, names) for e in r] for r in rows]

            def s_eval(t, X):
                e = env(t, X)
                S = np.zeros((len(X), d, d))
                for i, r in enumerate(full):
                    for j, f in enumerate(r):
                        S[:, i, j] = f(**e)
                return S
        kw["sigma"] = s_eval
    if isinstance(g, str):
        gf = compile_expression(g, ["t"])
        g_val = lambda t: float(gf(t=t))  # noqa: E731
    else:
        g_val = g
    return CoefficientField(d, b_eval, g=g_val, preset_id="expression", **kw)


def localize(cf: CoefficientField, n: int) -> CoefficientField:
    """Multiply sigma and b by ``u_n(x) v_n(t)`` with ``u_n(x) = 0 v (n+1-|x|) ^ 1``."""
    if n < 1:
        raise ValueError("n must be at least 1")

    def cut(t, X):
        u = np.clip(n + 1.0 - _norm(X), 0.0, 1.0)
        v = min(max(n + 1.0 - t, 0.0), 1.0)
        return u * v

    kw = {}
    if cf.sigma is not None:
        kw["sigma"] = lambda t, X: cf.sigma_at(t, X) * cut(t, X)[:, None, None]
        kw["sigma_scalar"] = None
    else:
        kw["sigma_scalar"] = lambda t, X: cf.sigma_scalar(t, X) * cut(t, X)
    return replace(cf, b=lambda t, X: cf.b_at(t, X) * cut(t, X)[:, None],
                   preset_id=f"{cf.preset_id}|localized({n})", **kw)


# ---------------------------------------------------------------------------
# Moduli and growth functions
# ---------------------------------------------------------------------------

def _slog(s):
    s = np.asarray(s, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s > 0, -s * np.log(np.where(s > 0, s, 1.0)), 0.0)


def _sloglog(s):
    s = np.asarray(s, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(s > 0, s, 0.5)
        L = -np.log(safe)
        return np.where(s > 0, safe * L * np.log(L), 0.0)


_LAMBDA_BUILTINS = {
    "identity": (lambda s: np.asarray(s, float), 0.99, lambda s: math.log(s)),
    "slog": (_slog, 0.36, lambda s: -math.log(-math.log(s))),
    "sloglog": (_sloglog, 0.05, lambda s: -math.log(math.log(-math.log(s)))),
}


@dataclass(frozen=True)
class ModulusLambda:
    """Osgood modulus on ``[0, eps0)``; builtins ``identity``, ``slog``, ``sloglog`` or ``custom``."""

    builtin: str = "identity"
    eps0: Optional[float] = None
    fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    label: str = ""

    def __post_init__(self):
        if self.builtin == "custom":
            if self.fn is None:
                raise ValueError("custom modulus needs fn")
        elif self.builtin in _LAMBDA_BUILTINS:
            if self.fn is None:
                object.__setattr__(self, "fn", _LAMBDA_BUILTINS[self.builtin][0])
        else:
            raise ValueError(f"unknown modulus {self.builtin!r}")
        if self.eps0 is None:
            eps0 = _LAMBDA_BUILTINS.get(self.builtin, (None, 0.5))[1]
            object.__setattr__(self, "eps0", eps0)
        if not (0.0 < self.eps0 < 1.0):
            raise ValueError("eps0 must lie in (0, 1)")
        if not self.label:
            object.__setattr__(self, "label", self.builtin)

    @classmethod
    def from_expression(cls, text: str, eps0: float = 0.5) -> "ModulusLambda":
        f = compile_expression(text, ["s"])
        return cls("custom", eps0, lambda s: f(s=np.asarray(s, float)), label=text)

    def __call__(self, s):
        return np.asarray(self.fn(np.asarray(s, float)), float)

    @property
    def antiderivative(self) -> Optional[Callable[[float], float]]:
        """Antiderivative of ``1/Lambda`` for builtins."""
        if self.builtin in _LAMBDA_BUILTINS and self.fn is _LAMBDA_BUILTINS[self.builtin][0]:
            return _LAMBDA_BUILTINS[self.builtin][2]
        return None

    def is_monotone(self, samples: int = 2000) -> bool:
        s = np.concatenate([[0.0], np.geomspace(1e-12, self.eps0 * (1 - 1e-9), samples)])
        v = self(s)
        return bool(np.all(np.isfinite(v)) and np.all(v >= 0) and np.all(np.diff(v) >= -1e-15))


_GAMMA_BUILTINS = {
    "linear": lambda s: np.asarray(s, float) + 1.0,
    "slog": lambda s: np.asarray(s, float) * np.log1p(np.asarray(s, float)) + 1.0,
}


@dataclass(frozen=True)
class GrowthGamma:
    """Growth function ``[0, inf) -> [1, inf)``; builtins ``linear`` (s+1) and ``slog`` (s log(s+1)+1)."""

    builtin: str = "linear"
    fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    label: str = ""

    def __post_init__(self):
        if self.builtin == "custom":
            if self.fn is None:
                raise ValueError("custom gamma needs fn")
        elif self.builtin in _GAMMA_BUILTINS:
            if self.fn is None:
                object.__setattr__(self, "fn", _GAMMA_BUILTINS[self.builtin])
        else:
            raise ValueError(f"unknown gamma {self.builtin!r}")
        if not self.label:
            object.__setattr__(self, "label", self.builtin)

    @classmethod
    def from_expression(cls, text: str) -> "GrowthGamma":
        f = compile_expression(text, ["s"])
        return cls("custom", lambda s: f(s=np.asarray(s, float)), label=text)

    def __call__(self, s):
        return np.asarray(self.fn(np.asarray(s, float)), float)

    def is_valid(self, samples: int = 2000, top: float = 1e12) -> bool:
        s = np.concatenate([[0.0], np.geomspace(1e-9, top, samples)])
        v = self(s)
        return bool(np.all(v >= 1.0) and np.all(np.diff(v) >= 0) and v[-1] > 1e3 * v[0])


def max_with_identity(obj):
    """``s -> obj(s) v s`` for a modulus or a growth function."""
    if isinstance(obj, ModulusLambda):
        if obj.builtin == "identity" and obj.antiderivative is not None:
            return obj
        f = obj.fn
        return ModulusLambda("custom", obj.eps0, lambda s: np.maximum(f(s), s),
                             label=f"max({obj.label}, s)")
    if isinstance(obj, GrowthGamma):
        if obj.builtin == "linear" and obj.fn is _GAMMA_BUILTINS["linear"]:
            return obj
        f = obj.fn
        return GrowthGamma("custom", lambda s: np.maximum(f(s), s), label=f"max({obj.label}, s)")
    raise TypeError("expected ModulusLambda or GrowthGamma")


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

class OsgoodError(ValueError):
    pass


@dataclass
class QuadratureResult:
    value: float
    error: float
    intervals: int
    converged: bool
    method: str = "quadrature"

    def __float__(self) -> float:
        return self.value


def adaptive_simpson(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                     tol: float = 1e-10, max_intervals: int = 2**20) -> QuadratureResult:
    """Adaptive Simpson rule with Richardson correction.

    Intervals are refined until each local error estimate ``|S2 - S1| / 15``
    is below its share of ``tol``; ``max_intervals`` caps the subdivision.
    """
    if b == a:
        return QuadratureResult(0.0, 0.0, 0, True)
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0

    def fv(x):
        v = np.asarray(f(np.asarray(x, float)), float)
        if not np.all(np.isfinite(v)):
            raise OsgoodError(f"integrand not finite near {float(np.atleast_1d(x)[0])!r}")
        return v

    m = 0.5 * (a + b)
    fa, fm, fb = fv(np.array([a, m, b]))
    whole = (b - a) / 6.0 * (fa + 4 * fm + fb)
    stack = [(a, b, fa, fm, fb, whole, tol)]
    total, err, done, intervals = 0.0, 0.0, 0, 1
    converged = True
    while stack:
        a0, b0, fa0, fm0, fb0, S, eps = stack.pop()
        m0 = 0.5 * (a0 + b0)
        lm, rm = 0.5 * (a0 + m0), 0.5 * (m0 + b0)
        flm, frm = fv(np.array([lm, rm]))
        left = (m0 - a0) / 6.0 * (fa0 + 4 * flm + fm0)
        right = (b0 - m0) / 6.0 * (fm0 + 4 * frm + fb0)
        delta = left + right - S
        if abs(delta) <= 15.0 * eps or intervals >= max_intervals or m0 in (a0, b0):
            if abs(delta) > 15.0 * eps:
                converged = False
            total += left + right + delta / 15.0
            err += abs(delta) / 15.0
            done += 1
            continue
        intervals += 1
        stack.append((m0, b0, fm0, frm, fb0, right, eps / 2.0))
        stack.append((a0, m0, fa0, flm, fm0, left, eps / 2.0))
    return QuadratureResult(float(sign * total), float(err), intervals, converged)


def osgood_partial_integral(L: ModulusLambda, a: float, eps: float, method: str = "quadrature",
                            tol: float = 1e-10) -> QuadratureResult:
    """``int_a^eps ds / Lambda(s)``.

    ``method="quadrature"`` integrates in ``u = log s`` (the integrand
    ``e^u / Lambda(e^u)`` stays smooth as ``a -> 0``); ``"analytic"`` uses the
    builtin antiderivative; ``"auto"`` picks analytic when available.
    """
    if not (0.0 < a < eps <= L.eps0):
        raise ValueError(f"need 0 < a < eps <= eps0 = {L.eps0}")
    F = L.antiderivative
    if method == "auto":
        method = "analytic" if F is not None else "quadrature"
    if method == "analytic":
        if F is None:
            raise ValueError("no antiderivative for this modulus")
        return QuadratureResult(float(F(eps) - F(a)), 0.0, 0, True, "analytic")
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")

    def integrand(u):
        s = np.exp(u)
        lam = L(s)
        if np.any(lam <= 0):
            bad = float(s[np.argmax(lam <= 0)])
            raise OsgoodError(f"Lambda vanishes at s = {bad!r} inside [a, eps]")
        return s / lam

    return adaptive_simpson(integrand, math.log(a), math.log(eps), tol)


def default_ladder(eps: float, rungs: int = 9) -> list[float]:
    """``a_k = exp(-2^k)`` for k = 1..rungs, keeping those below ``eps``."""
    return [a for a in (math.exp(-(2.0**k)) for k in range(1, rungs + 1)) if a < eps]


def osgood_diagnose(L: ModulusLambda, eps: Optional[float] = None,
                    ladder: Optional[Sequence[float]] = None, threshold: float = 0.5,
                    method: str = "quadrature") -> Report:
    """Heuristic divergence test: the last ladder increment must reach ``threshold``."""
    eps = L.eps0 if eps is None else eps
    ladder = default_ladder(eps) if ladder is None else list(ladder)
    if len(ladder) < 2 or any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("ladder must be strictly decreasing with at least two rungs")
    parts = [osgood_partial_integral(L, a, eps, method) for a in ladder]
    values = [p.value for p in parts]
    inc = np.diff(values)
    last = float(inc[-1])
    return Report(
        "osgood",
        last >= threshold,
        {"divergence_consistent": last >= threshold, "slope": last, "threshold": threshold,
         "eps": eps, "ladder": ladder, "partial_integrals": values,
         "errors": [p.error for p in parts], "modulus": L.label},
        [],
        ["heuristic: growth of partial integrals along a finite ladder, not a proof"],
    )


def phi_r(L: ModulusLambda, r: float, s: float, tol: float = 1e-10) -> float:
    """``int_0^s du / (Lambda(u) + r)``."""
    if r <= 0:
        raise ValueError("r must be positive")
    if not (0.0 <= s < 1.0):
        raise ValueError("s must lie in [0, 1)")
    if s == 0:
        return 0.0
    return adaptive_simpson(lambda u: 1.0 / (L(u) + r), 0.0, s, tol).value


def psi(G: GrowthGamma, s: float, tol: float = 1e-10) -> float:
    """``int_0^s du / gamma(u)``."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    if s == 0:
        return 0.0
    return adaptive_simpson(lambda u: 1.0 / G(u), 0.0, s, tol).value


# ---------------------------------------------------------------------------
# Sampled hypothesis checks
# ---------------------------------------------------------------------------

def _unit_rows(rng, n, d):
    U = rng.standard_normal((n, d))
    return U / np.linalg.norm(U, axis=1, keepdims=True)


def check_regularity(cf: CoefficientField, L: ModulusLambda, domain: Domain, R: float,
                     T: float, pair_count: int = 20000, seed: int = 0,
                     rtol: float = 1e-9) -> Report:
    """Falsify ``||s(x)-s(y)||^2 + 2<x-y, b(x)-b(y)> <= g(t) Lambda(|x-y|^2)``.

    Pairs have ``x`` in the closure within ``B(R)`` (a quarter drawn on the
    boundary) and ``|x - y|`` log-uniform down to 1e-12, with ``|x-y|^2 < eps0``.
    A floating-point noise floor is added to the right side.
    """
    if R <= 0 or T <= 0:
        raise ValueError("R and T must be positive")
    rng = np.random.default_rng(seed)
    d = domain.dimension
    nb = pair_count // 4
    Xb = domain.boundary_sampler(nb, seed)
    Xb = Xb[_norm(Xb) <= R]
    Xi = domain.sample_closure(pair_count - len(Xb), rng, radius=R)
    X = np.vstack([Xb, Xi])
    X = X[_norm(X) <= R]
    n = len(X)
    hmax = min(1.0, math.sqrt(L.eps0)) * (1 - 1e-9)
    h = np.exp(rng.uniform(math.log(1e-12), math.log(hmax), n))
    Y, _ = domain.project(X + h[:, None] * _unit_rows(rng, n, d))
    keep = (_norm(Y) <= R) & (np.sum((X - Y) ** 2, axis=1) > 0)
    X, Y = X[keep], Y[keep]
    t = rng.uniform(0.0, T, len(X))
    # times are pooled into 64 groups so evaluators stay vectorised
    order = np.argsort(t)
    Sx = np.empty((len(X), d, d))
    Sy = np.empty((len(X), d, d))
    Bx = np.empty((len(X), d))
    By = np.empty((len(X), d))
    for idx in np.array_split(order, max(1, min(len(X), 64))):
        if len(idx) == 0:
            continue
        tt = float(np.median(t[idx]))
        t[idx] = tt
        Sx[idx], Sy[idx] = cf.sigma_at(tt, X[idx]), cf.sigma_at(tt, Y[idx])
        Bx[idx], By[idx] = cf.b_at(tt, X[idx]), cf.b_at(tt, Y[idx])
    D = X - Y
    dist2 = np.sum(D * D, axis=1)
    dS = Sx - Sy
    lhs = np.sum(dS * dS, axis=(1, 2)) + 2.0 * np.sum(D * (Bx - By), axis=1)
    gt = np.array([cf.g_at(tt) for tt in t])
    rhs = gt * L(dist2)
    noise = 16 * _EPS * (2.0 * np.sqrt(dist2) * (_norm(Bx) + _norm(By))
                         + np.sum(Sx * Sx + Sy * Sy, axis=(1, 2)))
    excess = lhs - rhs - rtol * np.abs(rhs) - noise
    bad = np.nonzero(excess > 0)[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    worst = int(np.argmax(ratio)) if len(ratio) else 0
    witnesses = [{"t": float(t[i]), "x": X[i], "y": Y[i], "lhs": float(lhs[i]),
                  "rhs": float(rhs[i])} for i in bad[np.argsort(-excess[bad])][:10]]
    return Report(
        "regularity",
        len(bad) == 0,
        {"pairs": int(len(X)), "violations": int(len(bad)),
         "worst_ratio": float(ratio[worst]) if len(ratio) else 0.0,
         "modulus": L.label, "eps0": L.eps0, "R": R, "T": T},
        witnesses,
        [FALSIFIER_NOTE, "g is deterministic"],
    )


def check_growth(cf: CoefficientField, G: GrowthGamma, domain: Domain, T: float,
                 sample_count: int = 20000, seed: int = 0, radius: float = 1e3,
                 rtol: float = 1e-9) -> Report:
    """Falsify ``||sigma||^2 v |b|^2 <= g(t) gamma(|x|^2)`` with ``|x|`` log-uniform up to ``radius``."""
    rng = np.random.default_rng(seed)
    d = domain.dimension
    c, _ = domain.project(np.zeros(d))
    r = np.exp(rng.uniform(math.log(1e-6), math.log(radius), sample_count))
    X, _ = domain.project(c + r[:, None] * _unit_rows(rng, sample_count, d))
    t = rng.uniform(0.0, T, sample_count)
    lhs = np.empty(sample_count)
    for idx in np.array_split(np.argsort(t), 64):
        if len(idx) == 0:
            continue
        tt = float(np.median(t[idx]))
        t[idx] = tt
        lhs[idx] = np.maximum(cf.sigma_norm2(tt, X[idx]), np.sum(cf.b_at(tt, X[idx]) ** 2, axis=1))
    gt = np.array([cf.g_at(tt) for tt in t])
    rhs = gt * G(np.sum(X * X, axis=1))
    excess = lhs - rhs * (1 + rtol)
    bad = np.nonzero(excess > 0)[0]
    ratio = lhs / rhs
    witnesses = [{"t": float(t[i]), "x": X[i], "lhs": float(lhs[i]), "rhs": float(rhs[i])}
                 for i in bad[np.argsort(-excess[bad])][:10]]
    return Report(
        "growth",
        len(bad) == 0,
        {"samples": sample_count, "violations": int(len(bad)),
         "worst_ratio": float(ratio.max()), "gamma": G.label, "radius": radius, "T": T},
        witnesses,
        [FALSIFIER_NOTE, "g is deterministic"],
    )
