"""Experiment configuration: a strict JSON schema and domain/coefficient builders."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

import jsonschema
import numpy as np

from ..coefficients import (CoefficientField, GrowthGamma, ModulusLambda, from_expressions,
                            list_presets, make_preset)
from ..geometry import Ball, Box, Domain, HalfLine, HalfSpace, Polytope, Profile, Tube

SCHEMA_VERSION = 1

KINDS = ["solve1d", "simulate", "uniqueness", "explosion", "check-domain",
         "check-coefficients", "check-lyapunov", "check-covering", "variation-bound",
         "excursions"]

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_posvec = {"type": "array", "items": _pos, "minItems": 1}
_count = {"type": "integer", "minimum": 1}
_expr = {"type": "string", "minLength": 1}

DOMAIN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type"],
    "properties": {
        "type": {"enum": ["halfline", "halfspace", "box", "ball", "polytope", "tube"]},
        "lower": {"oneOf": [_num, _vec]},
        "upper": _vec,
        "normal": _vec,
        "offset": _num,
        "center": _vec,
        "radius": _pos,
        "dimension": {"type": "integer", "minimum": 1},
        "A": {"type": "array", "items": _vec, "minItems": 1},
        "b": _vec,
        "H": _expr,
        "dH": _expr,
        "d2H": _expr,
        "window": _pos,
        "r0": _pos,
        "delta": _pos,
        "beta": {"type": "number", "minimum": 1},
    },
    "allOf": [
        {"if": {"properties": {"type": {"const": "halfspace"}}},
         "then": {"required": ["normal"]}},
        {"if": {"properties": {"type": {"const": "box"}}},
         "then": {"required": ["lower", "upper"], "properties": {"lower": _vec}}},
        {"if": {"properties": {"type": {"const": "polytope"}}},
         "then": {"required": ["A", "b"]}},
        {"if": {"properties": {"type": {"const": "tube"}}},
         "then": {"required": ["H"]}},
    ],
}

COEFFICIENT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"enum": list_presets()},
        "params": {"type": "object", "additionalProperties": _num},
        "b": {"type": "array", "items": _expr, "minItems": 1},
        "sigma": {"oneOf": [_expr,
                            {"type": "array", "items": _expr, "minItems": 1},
                            {"type": "array", "items": {"type": "array", "items": _expr},
                             "minItems": 1}]},
        "g": {"oneOf": [{"type": "number", "minimum": 0}, _expr]},
    },
    "oneOf": [{"required": ["preset"], "not": {"anyOf": [{"required": ["b"]},
                                                          {"required": ["sigma"]}]}},
              {"required": ["b", "sigma"], "not": {"required": ["preset"]}}],
}

MODULUS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "builtin": {"enum": ["identity", "slog", "sloglog"]},
        "expression": _expr,
        "eps0": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    },
    "oneOf": [{"required": ["builtin"]}, {"required": ["expression"]}],
}

GAMMA_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"builtin": {"enum": ["linear", "slog"]}, "expression": _expr},
    "oneOf": [{"required": ["builtin"]}, {"required": ["expression"]}],
}

PARAMS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "w": _vec,
        "T": _pos,
        "dt": _pos,
        "x0": _vec,
        "R_ladder": _posvec,
        "paths": _count,
        "seeds": _count,
        "perturbations": {"type": "array", "items": {"type": "number", "minimum": 0},
                          "minItems": 1},
        "dt_ladder": _posvec,
        "modulus": MODULUS_SCHEMA,
        "gamma": GAMMA_SCHEMA,
        "radius": _pos,
        "samples": _count,
        "boundary_samples": _count,
        "pair_count": _count,
        "theta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "r0": _pos,
        "delta": _pos,
        "beta": {"type": "number", "minimum": 1},
        "variant": {"enum": ["convex", "tube"]},
        "m": _pos,
        "M": {"type": "number", "minimum": 0},
        "C": _pos,
        "case": {"enum": ["bounded", "sublinear"]},
        "K": _pos,
        "delta_hat": _pos,
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
        "window": _pos,
        "probes": {"type": "array", "items": _vec},
        "centers": {"type": "array", "items": _vec, "minItems": 1},
        "radii": _posvec,
        "beta_hat": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "refine": {"type": "boolean"},
        "escape_threshold": _pos,
        "expect": {"enum": ["no_explosion", "explosion"]},
        "boundary_tol": _pos,
        "margin_tol": _pos,
        "csv_paths": {"type": "integer", "minimum": 0},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "experiment": {"enum": KINDS},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "workers": {"oneOf": [{"type": "integer", "minimum": 1}, {"const": "auto"}]},
        "domain": DOMAIN_SCHEMA,
        "coefficients": COEFFICIENT_SCHEMA,
        "params": PARAMS_SCHEMA,
    },
}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(errors))
        self.errors = errors


def _path(err: jsonschema.ValidationError) -> str:
    out = "$"
    for p in err.absolute_path:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    workers: Any = None
    domain: Optional[dict] = None
    coefficients: Optional[dict] = None
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION, "experiment": self.experiment, "seed": self.seed}
        if self.domain is not None:
            out["domain"] = self.domain
        if self.coefficients is not None:
            out["coefficients"] = self.coefficients
        out["params"] = self.params
        return out


def validate(data: Any) -> list[str]:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    out = []
    for e in errors:
        msg = e.message
        if e.validator == "oneOf" and e.context:
            # the most specific branch failure is usually the useful one
            best = jsonschema.exceptions.best_match(e.context)
            msg = best.message
            out.append(f"{_path(best) if best.absolute_path else _path(e)}: {msg}")
            continue
        out.append(f"{_path(e)}: {msg}")
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Validate JSON text against the schema; raise ConfigError listing JSON paths."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"malformed JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})"])
    errors = validate(data)
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        experiment=data["experiment"],
        seed=int(data.get("seed", 0)),
        workers=data.get("workers"),
        domain=data.get("domain"),
        coefficients=data.get("coefficients"),
        params=dict(data.get("params", {})),
    )


def build_domain(spec: dict) -> Domain:
    kind = spec["type"]
    meta = {k: spec[k] for k in ("window",) if k in spec}
    meta.update({f"meta_{k}": spec[k] for k in ("r0", "delta", "beta") if k in spec})
    if kind == "halfline":
        return HalfLine(float(spec.get("lower", 0.0)), **meta)
    if kind == "halfspace":
        return HalfSpace(spec["normal"], float(spec.get("offset", 0.0)), **meta)
    if kind == "box":
        return Box(spec["lower"], spec["upper"], **meta)
    if kind == "ball":
        center = spec.get("center")
        dim = len(center) if center is not None else int(spec.get("dimension", 2))
        return Ball(center, float(spec.get("radius", 1.0)), dimension=dim, **meta)
    if kind == "polytope":
        return Polytope(np.array(spec["A"], float), np.array(spec["b"], float), **meta)
    if kind == "tube":
        if spec["H"].replace(" ", "") in ("s+1", "1+s"):
            profile = Profile.linear(1.0)
        else:
            profile = Profile.from_expression(spec["H"], spec.get("dH"), spec.get("d2H"))
        return Tube(profile, int(spec.get("dimension", 2)), **meta)
    raise ConfigError([f"$.domain.type: unknown domain {kind!r}"])


def build_coefficients(spec: dict, dimension: int) -> CoefficientField:
    if "preset" in spec:
        return make_preset(spec["preset"], dimension, **spec.get("params", {}))
    return from_expressions(dimension, spec["b"], spec["sigma"], spec.get("g", 1.0))


def build_modulus(spec: Optional[dict]) -> ModulusLambda:
    spec = spec or {"builtin": "identity"}
    if "expression" in spec:
        return ModulusLambda.from_expression(spec["expression"], spec.get("eps0", 0.5))
    return ModulusLambda(spec["builtin"], spec.get("eps0"))


def build_gamma(spec: Optional[dict]) -> GrowthGamma:
    spec = spec or {"builtin": "linear"}
    if "expression" in spec:
        return GrowthGamma.from_expression(spec["expression"])
    return GrowthGamma(spec["builtin"])
