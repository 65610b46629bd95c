"""Small arithmetic expression language for coefficients given in config files.

Variables ``t`` and ``x``; functions exp, log, sqrt, abs, min, max, pow;
operators + - * / ** and unary minus.  Expressions are parsed once with
:mod:`ast` and evaluated elementwise on numpy arrays, never with ``eval``.
"""
from __future__ import annotations

import ast
import math
import operator

import numpy as np

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: np.power,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {
    "exp": (np.exp, 1),
    "log": (np.log, 1),
    "sqrt": (np.sqrt, 1),
    "abs": (np.abs, 1),
    "min": (np.minimum, 2),
    "max": (np.maximum, 2),
    "pow": (np.power, 2),
}
_CONSTS = {"pi": math.pi, "e": math.e}
VARIABLES = ("t", "x")


class ExpressionError(ValueError):
    pass


def _check(node, source):
    if isinstance(node, ast.Expression):
        return _check(node.body, source)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"only numeric literals are allowed in {source!r}")
        return
    if isinstance(node, ast.Name):
        if node.id not in VARIABLES and node.id not in _CONSTS:
            raise ExpressionError(f"unknown name {node.id!r} in {source!r}")
        return
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check(node.left, source)
        _check(node.right, source)
        return
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        _check(node.operand, source)
        return
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            raise ExpressionError(f"unknown function in {source!r}")
        if node.keywords or len(node.args) != _FUNCS[node.func.id][1]:
            raise ExpressionError(f"{node.func.id} takes {_FUNCS[node.func.id][1]} argument(s) in {source!r}")
        for a in node.args:
            _check(a, source)
        return
    raise ExpressionError(f"unsupported syntax {type(node).__name__} in {source!r}")


def _eval(node, env):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id] if node.id in env else _CONSTS[node.id]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return _UNARY[type(node.op)](_eval(node.operand, env))
    fn = _FUNCS[node.func.id][0]
    return fn(*(_eval(a, env) for a in node.args))


class Expression:
    """A parsed expression in ``t`` and ``x``; call it as ``expr(t, x)``."""

    def __init__(self, source: str):
        self.source = str(source).strip()
        if not self.source:
            raise ExpressionError("empty expression")
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.source!r}: {exc.msg}") from None
        _check(tree, self.source)
        self._body = tree.body
        names = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)}
        self.variables = tuple(v for v in VARIABLES if v in names)

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            out = _eval(self._body, {"t": t, "x": x})
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast_shapes(t.shape, x.shape))

    @property
    def is_constant(self) -> bool:
        return not self.variables

    def value(self) -> float:
        if not self.is_constant:
            raise ExpressionError(f"{self.source!r} is not a constant")
        return float(self(0.0, 0.0))

    def __repr__(self):
        return f"Expression({self.source!r})"


def parse(source) -> Expression:
    return source if isinstance(source, Expression) else Expression(source)
