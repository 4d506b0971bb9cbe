"""Small expression language for right-hand sides, outputs and inputs.

Expressions are Python-syntax arithmetic over the names ``x``, ``v``, ``u``
(vectors, indexable as ``x[0]``; ``x1`` is shorthand for ``x[0]``) and the
time ``t``. Allowed: numbers, ``+ - * / **``, unary minus, and the functions
``min``, ``max``, ``exp``, ``sat``, ``abs``, ``sqrt``, ``tanh``.
``sat(z)`` clips to ``[-1, 1]`` and ``sat(z, lo, hi)`` to ``[lo, hi]``.
Anything else is rejected before compilation.
"""

from __future__ import annotations

import ast
import math
import re

from .errors import ConfigError


def _sat(z, lo=-1.0, hi=1.0):
    return min(max(z, lo), hi)


FUNCTIONS = {
    "min": min,
    "max": max,
    "exp": math.exp,
    "sat": _sat,
    "abs": abs,
    "sqrt": math.sqrt,
    "tanh": math.tanh,
}
VECTORS = ("x", "v", "u")
_SHORT = re.compile(r"^([xvu])(\d+)$")

_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
            ast.Subscript, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


class _Shorthand(ast.NodeTransformer):
    def visit_Name(self, node):
        m = _SHORT.match(node.id)
        if m:
            idx = int(m.group(2)) - 1
            if idx < 0:
                raise ConfigError(f"component index in {node.id!r} starts at 1")
            return ast.copy_location(
                ast.Subscript(ast.Name(m.group(1), ast.Load()), ast.Constant(idx), ast.Load()),
                node)
        return node


def _check(tree, src, line, names=(*VECTORS, "t")):
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ConfigError(f"unsupported syntax {type(node).__name__} in {src!r}", line)
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"only numeric constants are allowed in {src!r}", line)
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                raise ConfigError(f"unknown function in {src!r}", line)
            if node.keywords:
                raise ConfigError(f"keyword arguments are not allowed in {src!r}", line)
        if isinstance(node, ast.Subscript):
            if not (isinstance(node.value, ast.Name) and node.value.id in VECTORS
                    and isinstance(node.slice, ast.Constant)
                    and isinstance(node.slice.value, int)):
                raise ConfigError(f"only x[k], v[k], u[k] may be indexed in {src!r}", line)
        if isinstance(node, ast.Name) and node.id not in FUNCTIONS and node.id not in names:
            raise ConfigError(f"unknown name {node.id!r} in {src!r}", line)


def compile_expr(src: str, line: int | None = None, names=(*VECTORS, "t")):
    """Compile one expression to a function ``f(x, v, u, t) -> float``.

    ``names`` restricts the variables the expression may read.
    """
    if not isinstance(src, str):
        raise ConfigError(f"expression must be a string, got {src!r}", line)
    try:
        tree = ast.parse(src.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {src!r}: {exc.msg}", line) from None
    tree = ast.fix_missing_locations(_Shorthand().visit(tree))
    _check(tree, src, line, names)
    code = compile(tree, "<expr>", "eval")
    env = {"__builtins__": {}, **FUNCTIONS}

    def f(x, v, u, t=0.0):
        return float(eval(code, env, {"x": x, "v": v, "u": u, "t": t}))

    f.source = src
    return f


def compile_vector(srcs, line: int | None = None, names=(*VECTORS, "t")):
    """Compile a list of expressions to ``f(x, v, u, t) -> list``."""
    if isinstance(srcs, str):
        srcs = [srcs]
    if not isinstance(srcs, list):
        raise ConfigError(f"expected a list of expressions, got {srcs!r}", line)
    fs = [compile_expr(s, line, names) for s in srcs]

    def f(x, v, u, t=0.0):
        return [g(x, v, u, t) for g in fs]

    f.size = len(fs)
    return f


def compile_input(srcs, line: int | None = None):
    """Compile input expressions of ``t`` only, to ``u(t) -> list``."""
    f = compile_vector(srcs, line, names=("t",))

    def u(t):
        return f((), (), (), t)

    u.size = f.size
    return u
