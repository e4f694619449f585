"""Safe arithmetic expressions over named numpy variables.

Only numbers, the declared variables, ``pi``/``e``, the operators
``+ - * / **`` and the functions ``pow exp log sqrt min max abs`` are
accepted.  Everything else is rejected at parse time.
"""

from __future__ import annotations

import ast
import math
from typing import Callable, Iterable

import numpy as np

__all__ = ["ExpressionError", "compile_expression"]


class ExpressionError(ValueError):
    pass


def _min(*args):
    out = args[0]
    for a in args[1:]:
        out = np.minimum(out, a)
    return out


def _max(*args):
    out = args[0]
    for a in args[1:]:
        out = np.maximum(out, a)
    return out


_FUNCS: dict[str, tuple[Callable, int | None]] = {
    "exp": (np.exp, 1),
    "log": (np.log, 1),
    "sqrt": (np.sqrt, 1),
    "abs": (np.abs, 1),
    "pow": (np.power, 2),
    "min": (_min, None),
    "max": (_max, None),
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


def _build(node: ast.AST, names: frozenset[str]) -> Callable[[dict], object]:
    if isinstance(node, ast.Expression):
        return _build(node.body, names)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"unsupported literal {node.value!r}")
        value = float(node.value)
        return lambda env: value
    if isinstance(node, ast.Name):
        if node.id in names:
            key = node.id
            return lambda env: env[key]
        if node.id in _CONSTS:
            value = _CONSTS[node.id]
            return lambda env: value
        raise ExpressionError(f"unknown name {node.id!r}")
    if isinstance(node, ast.UnaryOp):
        inner = _build(node.operand, names)
        if isinstance(node.op, ast.USub):
            return lambda env: np.negative(inner(env))
        if isinstance(node.op, ast.UAdd):
            return inner
        raise ExpressionError("unsupported unary operator")
    if isinstance(node, ast.BinOp):
        op = _BINOPS.get(type(node.op))
        if op is None:
            raise ExpressionError(f"unsupported operator {type(node.op).__name__}")
        left, right = _build(node.left, names), _build(node.right, names)
        return lambda env: op(left(env), right(env))
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            raise ExpressionError("only pow, exp, log, sqrt, min, max, abs may be called")
        if node.keywords:
            raise ExpressionError("keyword arguments are not supported")
        fn, arity = _FUNCS[node.func.id]
        if (arity is not None and len(node.args) != arity) or not node.args:
            raise ExpressionError(f"{node.func.id} takes {arity} argument(s)")
        args = [_build(a, names) for a in node.args]
        return lambda env: fn(*(a(env) for a in args))
    raise ExpressionError(f"unsupported syntax: {type(node).__name__}")


def compile_expression(text: str, variables: Iterable[str]) -> Callable[..., np.ndarray]:
    """Compile ``text`` into a function taking the variables as keyword arrays.

    >>> f = compile_expression("max(x1, 0) * exp(-t)", ["t", "x1"])
    >>> float(f(t=0.0, x1=2.0))
    2.0
    """
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    names = frozenset(variables)
    fn = _build(tree, names)

    def evaluate(**env):
        missing = names.difference(env)
        if missing:
            raise ExpressionError(f"missing variables: {sorted(missing)}")
        with np.errstate(all="ignore"):
            return np.asarray(fn(env), dtype=float)

    evaluate.source = text
    return evaluate
