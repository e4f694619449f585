"""Structured pass/fail results shared by every checker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

FALSIFIER_NOTE = "pass means no violation found at the sampled resolution"


def jsonable(obj: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    return obj


@dataclass
class Report:
    check: str
    passed: bool
    summary: dict = field(default_factory=dict)
    witnesses: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.passed)

    def to_dict(self) -> dict:
        return jsonable(
            {
                "check": self.check,
                "passed": self.passed,
                "summary": self.summary,
                "witnesses": self.witnesses,
                "notes": self.notes,
            }
        )
