"""Safe arithmetic expressions in ``t``, ``x`` and ``y`` for scenario files.

The grammar is that of Python expressions restricted to numbers, the
operators ``+ - * / ^`` (``**`` is accepted as a synonym of ``^``),
parentheses, the constants ``pi`` and ``e`` and the functions ``sin``,
``cos``, ``exp``, ``abs``, ``min`` and ``max``.  Expressions are compiled
once into a tree of numpy closures and evaluated elementwise.
"""

import ast
from typing import Callable

import numpy as np

from .errors import InvalidSpec

VARIABLES = ("t", "x", "y")
CONSTANTS = {"pi": np.pi, "e": np.e}


def _nary(fn):
    def call(*args):
        if not args:
            raise InvalidSpec("min/max need at least one argument")
        out = args[0]
        for a in args[1:]:
            out = fn(out, a)
        return out
    return call


FUNCTIONS = {
    "sin": (np.sin, 1),
    "cos": (np.cos, 1),
    "exp": (np.exp, 1),
    "abs": (np.abs, 1),
    "min": (_nary(np.minimum), None),
    "max": (_nary(np.maximum), None),
}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class Expression:
    """Compiled expression; call with keyword arrays ``t``, ``x``, ``y``.

    Examples
    --------
    >>> Expression("2*x^2 + max(t, 0.5)")(t=0.0, x=np.array([1.0, 2.0]))
    array([2.5, 8.5])
    """

    def __init__(self, source):
        if isinstance(source, (int, float)) and not isinstance(source, bool):
            source = repr(float(source))
        if not isinstance(source, str):
            raise InvalidSpec(f"expression must be a string or number, got {type(source).__name__}")
        self.source = source
        try:
            tree = ast.parse(source.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise InvalidSpec(f"cannot parse expression {source!r}: {exc.msg}") from None
        self.names = set()
        self._fn = self._compile(tree.body)

    def _compile(self, node) -> Callable:
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            v = float(node.value)
            return lambda env: v
        if isinstance(node, ast.Name):
            if node.id in CONSTANTS:
                v = CONSTANTS[node.id]
                return lambda env: v
            if node.id in VARIABLES:
                name = node.id
                self.names.add(name)
                return lambda env: env[name]
            raise InvalidSpec(f"unknown name {node.id!r} in {self.source!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op = _BINOPS[type(node.op)]
            lhs, rhs = self._compile(node.left), self._compile(node.right)
            return lambda env: op(lhs(env), rhs(env))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            arg = self._compile(node.operand)
            if isinstance(node.op, ast.USub):
                return lambda env: np.negative(arg(env))
            return arg
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            if node.func.id not in FUNCTIONS:
                raise InvalidSpec(f"unknown function {node.func.id!r} in {self.source!r}")
            fn, arity = FUNCTIONS[node.func.id]
            if arity is not None and len(node.args) != arity:
                raise InvalidSpec(f"{node.func.id} takes {arity} argument(s)")
            args = [self._compile(a) for a in node.args]
            return lambda env: fn(*(a(env) for a in args))
        raise InvalidSpec(f"unsupported syntax in {self.source!r}")

    def __call__(self, t=0.0, x=0.0, y=0.0):
        env = {"t": t, "x": x, "y": y}
        with np.errstate(all="ignore"):
            out = self._fn(env)
        shape = np.broadcast_shapes(*(np.shape(v) for v in env.values()))
        return np.broadcast_to(np.asarray(out, dtype=float), shape).astype(float)

    def on_points(self, t, pts):
        """Evaluate at time ``t`` on an ``(n, dim)`` array of points."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x = pts[:, 0]
        y = pts[:, 1] if pts.shape[1] > 1 else np.zeros(len(pts))
        return self(t=t, x=x, y=y)

    def __repr__(self):
        return f"Expression({self.source!r})"


def field_function(source):
    """``(t, pts) -> values`` callable, or ``None`` for a missing entry."""
    if source is None:
        return None
    expr = Expression(source)
    return lambda t, pts: expr.on_points(t, pts)


def vector_function(components):
    """``(t, pts) -> (n, dim)`` callable from one expression per component."""
    if components is None:
        return None
    if isinstance(components, (str, int, float)):
        components = [components]
    exprs = [Expression(c) for c in components]

    def fn(t, pts):
        return np.column_stack([e.on_points(t, pts) for e in exprs])
    return fn


def coefficient_function(source):
    """Time-independent spatial coefficient ``pos -> values``, or a float."""
    if source is None:
        return 1.0
    expr = Expression(source)
    if not expr.names & {"x", "y"}:
        return float(expr())
    return lambda pos: expr.on_points(0.0, pos)
