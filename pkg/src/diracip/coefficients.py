"""Magnetic and electric coefficients and the assembled potential ``V = P(A) + Q``."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import clifford as cl
from .expr import ScalarField, VectorField, as_scalar, as_vector, gradient_field


@dataclass(frozen=True)
class Coefficients:
    A: VectorField
    q_plus: ScalarField
    q_minus: ScalarField

    @classmethod
    def build(cls, A=None, q_plus=0, q_minus=0):
        return cls(as_vector(A), as_scalar(q_plus), as_scalar(q_minus))

    def __repr__(self):
        return f"Coefficients(A={self.A.exprs}, q_plus={self.q_plus.expr}, q_minus={self.q_minus.expr})"

    def gauge(self, p) -> "Coefficients":
        """Return the coefficients with ``A`` replaced by ``A + grad p``."""
        p = as_scalar(p)
        return Coefficients(self.A + gradient_field(p), self.q_plus, self.q_minus)

    def with_shift(self, delta):
        return Coefficients(self.A, self.q_plus + delta, self.q_minus + delta)

    def potential(self, points):
        """``V = P(A) + diag(q+ I2, q- I2)`` at ``points``."""
        return cl.p_dirac(self.A(points)) + cl.q_matrix(self.q_plus(points), self.q_minus(points))

    def sample(self, points) -> "CoefficientSample":
        return CoefficientSample(self, np.asarray(points, dtype=float))


class CoefficientSample:
    """Coefficient values and exact derivatives at a fixed point set."""

    def __init__(self, coeffs: Coefficients, points):
        self.coeffs = coeffs
        self.points = points

    @cached_property
    def A(self):
        return self.coeffs.A(self.points)

    @cached_property
    def div_A(self):
        return self.coeffs.A.divergence(self.points)

    @cached_property
    def curl_A(self):
        return self.coeffs.A.curl(self.points)

    @cached_property
    def q_plus(self):
        return self.coeffs.q_plus(self.points)

    @cached_property
    def q_minus(self):
        return self.coeffs.q_minus(self.points)

    @cached_property
    def grad_q_plus(self):
        return self.coeffs.q_plus.grad(self.points)

    @cached_property
    def grad_q_minus(self):
        return self.coeffs.q_minus.grad(self.points)

    @cached_property
    def Q(self):
        return cl.q_matrix(self.q_plus, self.q_minus)

    @cached_property
    def Q_I(self):
        return cl.q_matrix(self.q_minus, self.q_plus)

    @cached_property
    def V(self):
        return cl.p_dirac(self.A) + self.Q

    @cached_property
    def schrodinger_block(self):
        """Zeroth-order block of ``H_{A,W}`` next to ``(D+A)^2``."""
        s = cl.sigma_dot(self.curl_A)
        qq = (self.q_plus * self.q_minus)[..., None, None] * cl.I2
        out = np.zeros(self.A.shape[:-1] + (4, 4), dtype=complex)
        out[..., :2, :2] = s - qq
        out[..., 2:, 2:] = s - qq
        out[..., :2, 2:] = -cl.sigma_dot(-1j * self.grad_q_plus)
        out[..., 2:, :2] = -cl.sigma_dot(-1j * self.grad_q_minus)
        return out
