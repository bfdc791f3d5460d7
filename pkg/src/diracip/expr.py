"""Closed-form coefficient expressions over ``(x1, x2, x3)``.

Expressions are parsed with sympy from a small grammar: numbers, the symbols
``x1, x2, x3``, the constant ``pi``, the operators ``+ - * / ^ **`` and the
functions ``exp, sin, cos, sqrt, log, tanh``. Derivatives are taken
symbolically and evaluated with numpy, which keeps every downstream residual
free of finite-difference error in the coefficients themselves.
"""

from __future__ import annotations

import re
from functools import cached_property

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

X = sp.symbols("x1 x2 x3", real=True)
_FUNCS = {"exp": sp.exp, "sin": sp.sin, "cos": sp.cos, "sqrt": sp.sqrt, "log": sp.log, "tanh": sp.tanh}
_NAMES = {"x1": X[0], "x2": X[1], "x3": X[2], "pi": sp.pi, **_FUNCS}
_TOKEN = re.compile(r"(?<![0-9.])[A-Za-z_][A-Za-z_0-9]*")  # skips exponents such as 1e-3


class ExpressionError(ValueError):
    pass


def parse(text) -> sp.Expr:
    """Parse ``text`` (str or number) into a sympy expression in ``x1..x3``."""
    if isinstance(text, sp.Basic):
        expr = text
    elif isinstance(text, (int, float)):
        expr = sp.nsimplify(text) if float(text).is_integer() else sp.Float(text)
    else:
        text = str(text)
        for tok in _TOKEN.findall(text):
            if tok not in _NAMES:
                raise ExpressionError(f"unknown name {tok!r} in expression {text!r}")
        glb = {
            "Integer": sp.Integer,
            "Float": sp.Float,
            "Rational": sp.Rational,
            "Symbol": sp.Symbol,
            "__builtins__": {},
        }
        try:
            expr = parse_expr(
                text,
                local_dict=dict(_NAMES),
                global_dict=glb,
                transformations=standard_transformations + (convert_xor,),
            )
        except Exception as exc:  # sympy raises a zoo of types here
            raise ExpressionError(f"cannot parse {text!r}: {exc}") from exc
    extra = expr.free_symbols - set(X)
    if extra:
        raise ExpressionError(f"free symbols {sorted(map(str, extra))} not allowed")
    return sp.sympify(expr)


def _lambdify(expr):
    f = sp.lambdify(X, expr, modules="numpy")

    def call(points):
        p = np.asarray(points, dtype=float)
        val = f(p[..., 0], p[..., 1], p[..., 2])
        return np.broadcast_to(np.asarray(val, dtype=float), p.shape[:-1]).copy()

    return call


class ScalarField:
    """A real scalar field with exact first and second derivatives."""

    def __init__(self, expr):
        self.expr = parse(expr)
        self._f = _lambdify(self.expr)

    def __repr__(self):
        return f"ScalarField({str(self.expr)!r})"

    @cached_property
    def _grad(self):
        return [_lambdify(sp.diff(self.expr, x)) for x in X]

    @cached_property
    def _lap(self):
        return _lambdify(sum(sp.diff(self.expr, x, 2) for x in X))

    @cached_property
    def _hess(self):
        return [[_lambdify(sp.diff(self.expr, a, b)) for b in X] for a in X]

    @property
    def is_zero(self):
        return self.expr == 0

    def __call__(self, points):
        return self._f(points)

    def grad(self, points):
        return np.stack([g(points) for g in self._grad], axis=-1)

    def laplacian(self, points):
        return self._lap(points)

    def hessian(self, points):
        return np.stack([np.stack([h(points) for h in row], axis=-1) for row in self._hess], axis=-2)

    def __add__(self, other):
        return ScalarField(self.expr + _expr_of(other))

    def __sub__(self, other):
        return ScalarField(self.expr - _expr_of(other))

    def __mul__(self, other):
        return ScalarField(self.expr * _expr_of(other))

    __rmul__ = __mul__


class VectorField:
    """A real 3-vector field (magnetic potential) with exact derivatives."""

    def __init__(self, exprs):
        if isinstance(exprs, (str, int, float)) or len(exprs) != 3:
            if exprs in (0, "0"):
                exprs = (0, 0, 0)
            else:
                raise ExpressionError("vector field needs three component expressions")
        self.components = [ScalarField(e) for e in exprs]

    def __repr__(self):
        return f"VectorField({[str(c.expr) for c in self.components]})"

    @property
    def exprs(self):
        return [c.expr for c in self.components]

    @property
    def is_zero(self):
        return all(c.is_zero for c in self.components)

    def __call__(self, points):
        return np.stack([c(points) for c in self.components], axis=-1)

    def jacobian(self, points):
        """``J[..., i, j] = d A_i / d x_j``."""
        return np.stack([c.grad(points) for c in self.components], axis=-2)

    def divergence(self, points):
        J = self.jacobian(points)
        return J[..., 0, 0] + J[..., 1, 1] + J[..., 2, 2]

    def curl(self, points):
        J = self.jacobian(points)
        return np.stack(
            [J[..., 2, 1] - J[..., 1, 2], J[..., 0, 2] - J[..., 2, 0], J[..., 1, 0] - J[..., 0, 1]],
            axis=-1,
        )

    def laplacian(self, points):
        return np.stack([c.laplacian(points) for c in self.components], axis=-1)

    def __add__(self, other):
        return VectorField([a + b for a, b in zip(self.exprs, _vector_exprs(other))])

    def __sub__(self, other):
        return VectorField([a - b for a, b in zip(self.exprs, _vector_exprs(other))])


def _expr_of(other):
    return other.expr if isinstance(other, ScalarField) else parse(other)


def _vector_exprs(other):
    if isinstance(other, VectorField):
        return other.exprs
    return [parse(e) for e in other]


def gradient_field(p: ScalarField) -> VectorField:
    return VectorField([sp.diff(p.expr, x) for x in X])


def as_scalar(value) -> ScalarField:
    return value if isinstance(value, ScalarField) else ScalarField(value)


def as_vector(value) -> VectorField:
    if isinstance(value, VectorField):
        return value
    if value is None:
        return VectorField((0, 0, 0))
    return VectorField(value)
