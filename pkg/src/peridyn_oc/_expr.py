"""Small arithmetic expression language used for coefficient and data fields.

Fields such as the material coefficient, tracking weight, and desired state
are supplied as strings over the spatial coordinates, e.g. ``"1 + 0.5*x"``,
``"sin(pi*x)*sin(pi*y)"`` or ``"box(0.25, 0.75)"``.  The grammar is a strict
whitelist evaluated over NumPy arrays:

* numbers, ``x`` (and ``y`` in two dimensions), ``pi``
* ``+  -  *  /  **`` and unary minus
* ``sin  cos  exp  sqrt  abs  min  max``
* ``box(x0, x1)`` / ``box(x0, x1, y0, y1)``: indicator of an axis-aligned box
* a top-level comma builds a vector field, e.g. ``"x, 0"``

Anything else (names, attribute access, calls) is rejected, so configuration
files cannot execute arbitrary code.
"""

import ast

import numpy as np

_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
}

_CONSTANTS = {"pi": np.pi}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExpressionError(ValueError):
    """Raised when an expression uses anything outside the whitelist."""


def _compile_node(node, dim):
    """Recursively compile an AST node to a closure ``f(x, y) -> array``."""
    if isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ExpressionError("only numeric literals are allowed")
        val = float(node.value)
        return lambda x, y: val
    if isinstance(node, ast.Name):
        if node.id == "x":
            return lambda x, y: x
        if node.id == "y":
            if dim < 2:
                raise ExpressionError("'y' is only available in two dimensions")
            return lambda x, y: y
        if node.id in _CONSTANTS:
            val = _CONSTANTS[node.id]
            return lambda x, y: val
        raise ExpressionError("unknown name %r" % node.id)
    if isinstance(node, ast.BinOp):
        for op_type, func in _BINOPS.items():
            if isinstance(node.op, op_type):
                left = _compile_node(node.left, dim)
                right = _compile_node(node.right, dim)
                return lambda x, y, f=func, a=left, b=right: f(a(x, y), b(x, y))
        raise ExpressionError("unsupported operator")
    if isinstance(node, ast.UnaryOp):
        operand = _compile_node(node.operand, dim)
        if isinstance(node.op, ast.USub):
            return lambda x, y, a=operand: -a(x, y)
        if isinstance(node.op, ast.UAdd):
            return operand
        raise ExpressionError("unsupported unary operator")
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.keywords:
            raise ExpressionError("only plain calls to whitelisted functions")
        name = node.func.id
        args = [_compile_node(a, dim) for a in node.args]
        if name in _FUNCS:
            if len(args) != 1:
                raise ExpressionError("%s() takes one argument" % name)
            return lambda x, y, f=_FUNCS[name], a=args[0]: f(a(x, y))
        if name in ("min", "max"):
            if len(args) < 2:
                raise ExpressionError("%s() needs at least two arguments" % name)
            func = np.minimum if name == "min" else np.maximum
            def fold(x, y, f=func, parts=args):
                out = parts[0](x, y)
                for p in parts[1:]:
                    out = f(out, p(x, y))
                return out
            return fold
        if name == "box":
            if len(args) == 2:
                x0, x1 = args
                return lambda x, y, a=x0, b=x1: (
                    (x >= a(x, y)) & (x <= b(x, y))
                ).astype(float)
            if len(args) == 4 and dim == 2:
                x0, x1, y0, y1 = args
                return lambda x, y, a=x0, b=x1, c=y0, d=y1: (
                    (x >= a(x, y)) & (x <= b(x, y))
                    & (y >= c(x, y)) & (y <= d(x, y))
                ).astype(float)
            raise ExpressionError("box() takes 2 arguments (or 4 in 2-d)")
        raise ExpressionError("unknown function %r" % name)
    raise ExpressionError("unsupported syntax: %s" % type(node).__name__)


def _split_components(expr):
    """Parse ``expr`` and return the list of top-level component AST nodes."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError("cannot parse expression %r: %s" % (expr, exc))
    body = tree.body
    if isinstance(body, ast.Tuple):
        return list(body.elts)
    return [body]


def _coords(points, dim):
    pts = np.asarray(points, dtype=float)
    if dim == 1:
        x = pts.reshape(-1)
        return x, None, x.shape
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    return pts[..., 0], pts[..., 1], pts[..., 0].shape


def parse_scalar(expr, dim):
    """Compile a scalar field; returns ``f(points) -> (npoints,) array``."""
    comps = _split_components(expr)
    if len(comps) != 1:
        raise ExpressionError("expected a scalar expression, got %d components"
                              % len(comps))
    fn = _compile_node(comps[0], dim)

    def evaluate(points):
        x, y, shape = _coords(points, dim)
        return np.broadcast_to(np.asarray(fn(x, y), dtype=float), shape).copy()

    return evaluate


def parse_vector(expr, dim):
    """Compile a vector field with ``dim`` components.

    In one dimension a plain scalar expression is accepted; in two dimensions
    the expression must have two comma-separated components.
    Returns ``f(points) -> (npoints, dim) array``.
    """
    comps = _split_components(expr)
    if len(comps) != dim:
        raise ExpressionError(
            "expected %d comma-separated components, got %d" % (dim, len(comps)))
    fns = [_compile_node(c, dim) for c in comps]

    def evaluate(points):
        x, y, shape = _coords(points, dim)
        out = np.empty(shape + (dim,), dtype=float)
        for k, fn in enumerate(fns):
            out[..., k] = np.broadcast_to(np.asarray(fn(x, y), dtype=float), shape)
        return out

    return evaluate


def constant_value(expr, dim):
    """Return the constant value of a scalar expression, or None.

    Detection is by evaluation on a fixed probe grid, which is exact for the
    supported closed-form expressions.
    """
    fn = parse_scalar(expr, dim)
    t = np.linspace(-2.31, 3.17, 13)
    probes = t if dim == 1 else np.column_stack([t, t[::-1] * 0.7 - 0.1])
    vals = fn(probes)
    if np.all(vals == vals[0]):
        return float(vals[0])
    return None
