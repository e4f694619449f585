"""Dispatch a validated config to the experiment it names and package the result."""

from __future__ import annotations

import json
import math
import os
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .. import __version__
from ..certify import (CoveringSpec, check_V1, check_V2, check_V3, check_covering,
                       covering_preset, excursion_diagnostic, preset_example_2_1)
from ..coefficients import check_growth, check_regularity, osgood_diagnose
from ..geometry import Domain, saisho_constants, verify_condition_A, verify_condition_B
from ..parallel import PMap, make_pmap, resolve_workers
from ..reports import jsonable
from ..sde import (BrownianDriver, ExplosionReport, brownian, explosion_experiment,
                   simulate_batch, uniqueness_experiment)
from ..skorohod import (SampledPath, check_variation_bound, solve_1d, verify_solution,
                        write_path_csv)
from .config import (ExperimentConfig, build_coefficients, build_domain, build_gamma,
                     build_modulus)

FORMAT_VERSION = 1

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


@dataclass
class RunReport:
    payload: dict
    provenance: dict
    paths: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.payload.get("passed"))

    @property
    def exit_code(self) -> int:
        if "error" in self.payload:
            return EXIT_ERROR
        return EXIT_PASS if self.passed else EXIT_FAIL

    def payload_bytes(self) -> bytes:
        return json.dumps(jsonable(self.payload), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")

    def to_dict(self) -> dict:
        return {"payload": jsonable(self.payload), "provenance": jsonable(self.provenance)}

    def write(self, out_dir: Union[str, os.PathLike]) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        target = out / "report.json"
        target.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")
        for i, p in enumerate(self.paths):
            emit_csv(out / f"path_{i}.csv", p)
        return target


def emit_csv(target, obj) -> None:
    """Write a path (``t,x1,...,xd``) or a list of flat dict rows, 17 significant digits."""
    if isinstance(obj, SampledPath):
        write_path_csv(target, obj)
        return
    rows = list(obj)
    if not rows:
        raise ValueError("nothing to write")
    header = list(rows[0])

    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return format(float(v), ".17g")
        return str(v)

    lines = [",".join(header)] + [",".join(fmt(r[k]) for k in header) for r in rows]
    text = "\n".join(lines) + "\n"
    if hasattr(target, "write"):
        target.write(text)
    else:
        Path(target).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# Experiment handlers: (config, pmap) -> (passed, results, paths)
# ---------------------------------------------------------------------------

def _domain(cfg: ExperimentConfig, default: Optional[dict] = None) -> Domain:
    spec = cfg.domain or default
    if spec is None:
        raise ValueError("this experiment needs a domain")
    return build_domain(spec)


def _coefficients(cfg: ExperimentConfig, d: int, default: str = "brownian"):
    spec = cfg.coefficients or {"preset": default}
    return build_coefficients(spec, d)


def _x0(cfg: ExperimentConfig, domain: Domain) -> np.ndarray:
    if "x0" in cfg.params:
        return np.asarray(cfg.params["x0"], float)
    p, _ = domain.project(np.zeros(domain.dimension))
    return p


def _chunks(n: int, size: int) -> list[list[int]]:
    return [list(range(i, min(n, i + size))) for i in range(0, n, size)]


def _run_solve1d(cfg, pmap):
    w = np.asarray(cfg.params.get("w", [0.0]), float)
    dt = cfg.params.get("dt", 1.0 / max(1, len(w) - 1))
    xi, phi = solve_1d(SampledPath.uniform(w, dt))
    inc = np.diff(phi.values[:, 0])
    ok = bool(np.all(xi.values >= 0) and np.all(inc >= 0) and phi.values[0, 0] == 0)
    return ok, {"grid": xi.grid, "xi": xi.values[:, 0], "phi": phi.values[:, 0]}, [xi]


def _simulate_paths(cfg, pmap, domain, cf, x0, T, dt, R_ladder, n):
    base = brownian(cfg.seed, domain.dimension, T, dt)

    def run(idx):
        sols, rep = simulate_batch(domain, cf, x0, [base.for_path(i) for i in idx], R_ladder)
        return sols, rep

    parts = pmap(run, _chunks(n, 50))
    sols = [s for p in parts for s in p[0]]
    rep = ExplosionReport.merge([p[1] for p in parts])
    return sols, rep


def _run_simulate(cfg, pmap):
    domain = _domain(cfg)
    cf = _coefficients(cfg, domain.dimension)
    p = cfg.params
    T, dt = p.get("T", 1.0), p.get("dt", 1e-3)
    sols, rep = _simulate_paths(cfg, pmap, domain, cf, _x0(cfg, domain), T, dt,
                                p.get("R_ladder"), p.get("paths", 1))
    r0 = p.get("r0", domain.meta_r0 or 1.0)
    checks = pmap(lambda s: verify_solution(s, domain, r0, p.get("boundary_tol", 1e-6),
                                            p.get("margin_tol", 1e-8)), sols)
    per_path = [{"stopped_at": list(s.stopped_at), "radius_hits": s.radius_hits,
                 "final": s.X.values[-1], "total_variation": float(s.total_variation[-1]),
                 "verify": c.summary} for s, c in zip(sols, checks)]
    results = {"explosion": rep.to_dict(), "paths": per_path}
    csv = [s.X for s in sols[: p.get("csv_paths", 0)]]
    return all(c.passed for c in checks), results, csv


def _run_uniqueness(cfg, pmap):
    domain = _domain(cfg, {"type": "halfline"})
    cf = _coefficients(cfg, domain.dimension, "loglip")
    p = cfg.params
    seeds = [cfg.seed + i for i in range(p.get("seeds", 100))]
    rep = uniqueness_experiment(domain, cf, build_modulus(p.get("modulus", {"builtin": "slog"})),
                                _x0(cfg, domain), p.get("T", 1.0), p.get("dt", 1e-4),
                                p.get("perturbations", [0.0, 1e-2, 1e-4, 1e-8]), seeds,
                                p.get("dt_ladder"), radius=p.get("radius", 10.0), pmap=pmap)
    return rep.passed, rep.to_dict(), []


def _run_explosion(cfg, pmap):
    domain = _domain(cfg)
    cf = _coefficients(cfg, domain.dimension)
    p = cfg.params
    R = p.get("R_ladder", [math.exp(10)])
    rep = explosion_experiment(domain, cf, _x0(cfg, domain), p.get("T", 1.0), p.get("dt", 1e-3),
                               R, p.get("paths", 1000), cfg.seed, pmap=pmap)
    expect = p.get("expect")
    if expect == "no_explosion":
        ok = bool(np.all(rep.hit_counts == 0))
    elif expect == "explosion":
        ok = bool(rep.hit_counts[-1] > 0)
    else:
        ok = True  # hitting is data, not failure
    return ok, rep.to_dict(), []


def _run_check_domain(cfg, pmap):
    domain = _domain(cfg)
    p = cfg.params
    r0 = p.get("r0", domain.meta_r0 or 1.0)
    delta = p.get("delta", domain.meta_delta or 0.1)
    beta = p.get("beta", domain.meta_beta or 2.0)
    a = verify_condition_A(domain, r0, seed=cfg.seed)
    b = verify_condition_B(domain, delta, beta, seed=cfg.seed)
    return a.passed and b.passed, {"condition_A": a.to_dict(), "condition_B": b.to_dict()}, []


def _run_check_coefficients(cfg, pmap):
    domain = _domain(cfg)
    cf = _coefficients(cfg, domain.dimension)
    p = cfg.params
    L = build_modulus(p.get("modulus"))
    G = build_gamma(p.get("gamma"))
    T = p.get("T", 1.0)
    reg = check_regularity(cf, L, domain, p.get("radius", 10.0), T,
                           p.get("pair_count", 20000), cfg.seed)
    grow = check_growth(cf, G, domain, T, p.get("samples", 20000), cfg.seed,
                        radius=p.get("radius", 1e3))
    osg = osgood_diagnose(L)
    ok = reg.passed and grow.passed and osg.passed
    return ok, {"regularity": reg.to_dict(), "growth": grow.to_dict(),
                "osgood": osg.to_dict()}, []


def _run_check_lyapunov(cfg, pmap):
    p = cfg.params
    variant = p.get("variant", "convex")
    preset = preset_example_2_1(variant, C=p.get("C", 1.0), m=p.get("m", 4.0), M=p.get("M", 0.0))
    domain, cert, G, g = preset
    T = p.get("T", 1.0)
    v1 = check_V1(cert, domain, T, p.get("R_ladder", [1, 2, 4, 8, 16]), seed=cfg.seed,
                  escape_threshold=p.get("escape_threshold", 100.0))
    v2 = check_V2(cert, domain, p.get("boundary_samples", 10000), cfg.seed, T)
    v3 = check_V3(cert, preset.coefficients, G, g, domain, T, p.get("samples", 100000), cfg.seed)
    return (v1.passed and v2.passed and v3.passed,
            {"variant": variant, "g": g, "V1": v1.to_dict(), "V2": v2.to_dict(),
             "V3": v3.to_dict(), "notes": preset.notes}, [])


def _run_check_covering(cfg, pmap):
    p = cfg.params
    spec, cf, domain = covering_preset(p.get("case", "bounded"), window=p.get("window", 10.0),
                                       K=p.get("K", 1.0), delta_hat=p.get("delta_hat", 1.0),
                                       C=p.get("C", 1.0), epsilon=p.get("epsilon", 0.25),
                                       T=p.get("T", 1.0))
    probes = np.array(p["probes"], float) if "probes" in p else None
    rep = check_covering(spec, cf, domain, p.get("samples", 2000), cfg.seed, probes=probes)
    return rep.passed, rep.to_dict(), []


def _run_variation_bound(cfg, pmap):
    domain = _domain(cfg)
    cf = _coefficients(cfg, domain.dimension)
    p = cfg.params
    theta = p.get("theta", 0.5)
    C = saisho_constants(theta, p.get("r0", domain.meta_r0 or 1.0),
                         p.get("beta", domain.meta_beta or 1.0),
                         p.get("delta", domain.meta_delta or 1.0))
    sols, _ = _simulate_paths(cfg, pmap, domain, cf, _x0(cfg, domain), p.get("T", 1.0),
                              p.get("dt", 1e-3), None, p.get("paths", 1))
    reps = pmap(lambda s: check_variation_bound(s, s.W, theta, C), sols)
    windows = sum(r.summary["windows"] for r in reps)
    good = sum(r.summary["passed_windows"] for r in reps)
    results = {"C1": C[0], "C2": C[1], "theta": theta, "windows": windows,
               "passed_windows": good,
               "min_slack": min(r.summary["min_slack"] for r in reps),
               "witnesses": [w for r in reps for w in r.witnesses][:10]}
    return good == windows, results, [s.X for s in sols[: p.get("csv_paths", 0)]]


def _run_excursions(cfg, pmap):
    domain = _domain(cfg, {"type": "halfline"})
    cf = _coefficients(cfg, domain.dimension)
    p = cfg.params
    centers = np.array(p.get("centers", [[0.0] * domain.dimension]), float)
    radii = np.array(p.get("radii", [0.5] * len(centers)), float)
    spec = CoveringSpec(centers, radii, p.get("delta_hat", float(radii.min())),
                        p.get("beta_hat", 0.5), 0.0, 1.0, p.get("T", 1.0),
                        p.get("window", 10.0))
    T, dt = p.get("T", 1.0), p.get("dt", 1e-3)
    x0 = _x0(cfg, domain)
    n = p.get("paths", 100)
    refine = p.get("refine", True)

    def run(idx):
        drvs = [BrownianDriver(cfg.seed, domain.dimension, T, dt, 0, i) for i in idx]
        sols, _ = simulate_batch(domain, cf, x0, drvs)
        fine = simulate_batch(domain, cf, x0, [d.refine() for d in drvs])[0] if refine else None
        out = []
        for j, i in enumerate(idx):
            a = excursion_diagnostic(sols[j], spec, domain)
            row = {"path": i, "sigma_count": a.summary["sigma_count"], "ok": a.passed}
            if refine:
                b = excursion_diagnostic(fine[j], spec, domain)
                row["sigma_count_refined"] = b.summary["sigma_count"]
                row["ok"] = row["ok"] and b.passed
            out.append(row)
        return out

    chunks = [list(range(k, min(k + 25, n))) for k in range(0, n, 25)]
    rows = [r for part in pmap(run, chunks) for r in part]
    ok = all(r["ok"] for r in rows)
    results = {"paths": rows, "median_sigma_count": float(np.median([r["sigma_count"] for r in rows]))}
    if refine:
        diffs = [abs(r["sigma_count"] - r["sigma_count_refined"]) for r in rows]
        results["median_abs_change_under_halving"] = float(np.median(diffs))
        ok = ok and results["median_abs_change_under_halving"] <= 1
    return ok, results, []


HANDLERS: dict[str, Callable] = {
    "solve1d": _run_solve1d,
    "simulate": _run_simulate,
    "uniqueness": _run_uniqueness,
    "explosion": _run_explosion,
    "check-domain": _run_check_domain,
    "check-coefficients": _run_check_coefficients,
    "check-lyapunov": _run_check_lyapunov,
    "check-covering": _run_check_covering,
    "variation-bound": _run_variation_bound,
    "excursions": _run_excursions,
}


def run(cfg: ExperimentConfig, workers=None, out_dir=None) -> RunReport:
    """Run one experiment; numeric payloads do not depend on ``workers``."""
    n_workers = resolve_workers(workers if workers is not None else cfg.workers)
    pmap: PMap = make_pmap(n_workers)
    start = time.perf_counter()
    payload = {"format_version": FORMAT_VERSION, "kind": cfg.experiment,
               "config": cfg.to_dict()}
    paths = []
    try:
        passed, results, paths = HANDLERS[cfg.experiment](cfg, pmap)
        payload["passed"] = bool(passed)
        payload["results"] = results
    except Exception as exc:  # execution errors become exit code 1
        payload["passed"] = False
        payload["error"] = f"{type(exc).__name__}: {exc}"
        payload["traceback"] = traceback.format_exc().splitlines()[-6:]
    provenance = {"version": __version__, "seed": cfg.seed, "workers": n_workers,
                  "wall_time_s": round(time.perf_counter() - start, 3)}
    rep = RunReport(payload, provenance, paths)
    if out_dir is not None:
        rep.write(out_dir)
    return rep


def determinism_self_test(cfg: ExperimentConfig, workers: int = 8) -> tuple[bool, RunReport, RunReport]:
    """Run with 1 and ``workers`` workers and compare payload bytes."""
    a = run(cfg, workers=1)
    b = run(cfg, workers=workers)
    return a.payload_bytes() == b.payload_bytes(), a, b
