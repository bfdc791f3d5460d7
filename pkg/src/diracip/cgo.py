"""Complex geometrical optics solutions ``U = e^{-rho/h} sum_j h^j C_j``.

The amplitude stack is built by the recursion

    C_0 = P(grad rho) Ct_0,            M Ct_0 = 0,
    C_j = (1/i)(P(D+A) - Q_I) Ct_{j-1} + P(grad rho) Ct_j,   M Ct_j = i H Ct_{j-1},

where ``M = 2 grad(rho).(D+A) + (1/i) Lap(rho)`` is the transport operator and
``H = (P(D+A) + Q)(P(D+A) - Q_I)`` the Schrodinger operator. Truncating at
order ``m`` (the last term carries no ``Ct_m``) leaves the conjugated residual
``h^m (1/i) H Ct_{m-1}``.

Three phase variants are supported: ``minus_rho`` (``e^{-rho/h}``),
``plus_rho`` (``e^{rho/h}``) and ``minus_rhobar`` (``e^{-conj(rho)/h}``).
All fields live on a :class:`~diracip.spectral.CylinderGrid`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import clifford as cl
from .cauchy import HolomorphicAmplitude
from .coefficients import Coefficients, CoefficientSample
from .spectral import CylinderGrid

ALPHA = cl.p_dirac(np.eye(3))  # P(e_k), shape (3, 4, 4)


@dataclass(frozen=True)
class Variant:
    name: str
    sign: int  # grad rho_variant = sign * zeta_v / z_v
    bar: bool  # zeta_v = conj(zeta), z_v = conj(z)


VARIANTS = {
    "minus_rho": Variant("minus_rho", 1, False),
    "plus_rho": Variant("plus_rho", -1, False),
    "minus_rhobar": Variant("minus_rhobar", 1, True),
}


def get_variant(v) -> Variant:
    if isinstance(v, Variant):
        return v
    try:
        return VARIANTS[v]
    except KeyError:
        raise ValueError(f"unknown CGO variant {v!r}; choose from {sorted(VARIANTS)}") from None


def variant_geometry(grid: CylinderGrid, variant):
    """``(zeta_v, z_v, grad rho_v, lap rho_v)`` on the grid nodes."""
    v = get_variant(variant)
    sc = grid.coords
    zeta = np.conj(sc.zeta) if v.bar else sc.zeta
    z = np.conj(sc.z) if v.bar else sc.z
    grad = v.sign * zeta / z[..., None]
    lap = -2.0 / (sc.z * (sc.z - np.conj(sc.z)))
    lap = v.sign * (np.conj(lap) if v.bar else lap)
    return zeta, z, grad, lap


def _trail(a, ndim):
    return a.reshape(a.shape + (1,) * (ndim - a.ndim))


# --------------------------------------------------------------------------
# operators on matrix (or vector) fields with leading axes = grid


def dirac_apply(grid, C, A):
    """``P(D + A) C`` where ``C`` has shape ``grid.shape + (4, ...)``."""
    C = np.asarray(C, dtype=complex)
    G = grid.grad(C)  # (..., 4, k, 3)
    comp = -1j * G + A.reshape(A.shape[:3] + (1,) * (C.ndim - 3) + (3,)) * C[..., None]
    if C.ndim == 4:
        return np.einsum("kij,...jk->...i", ALPHA, comp)
    return np.einsum("kij,...jlk->...il", ALPHA, comp)


def _left(M, C):
    """Nodewise ``M @ C`` for ``M`` of shape ``(..., 4, 4)``."""
    if C.ndim == M.ndim - 1:
        return np.einsum("...ij,...j->...i", M, C)
    return M @ C


def magnetic_square(grid, C, cs: CoefficientSample):
    """``(D+A)^2 C = -Lap C - i div(A) C - 2i A.grad C + (A.A) C``."""
    nd = C.ndim
    G = grid.grad(C)
    A = cs.A.reshape(cs.A.shape[:3] + (1,) * (nd - 3) + (3,))
    adot = np.sum(A * G, axis=-1)
    return (
        -grid.laplacian(C)
        - 1j * _trail(cs.div_A, nd) * C
        - 2j * adot
        + _trail(np.sum(cs.A**2, axis=-1), nd) * C
    )


def apply_schrodinger(grid, C, coeffs: Coefficients | CoefficientSample):
    """Expanded ``H_{A,W} C = (D+A)^2 C + [[s - q+q-, -s.Dq+], [-s.Dq-, s - q+q-]] C``, ``s = sigma.curl A``."""
    cs = coeffs if isinstance(coeffs, CoefficientSample) else coeffs.sample(grid.points)
    return magnetic_square(grid, C, cs) + _left(cs.schrodinger_block, np.asarray(C, dtype=complex))


def apply_schrodinger_factored(grid, C, coeffs: Coefficients | CoefficientSample):
    """``(P(D+A) + Q)(P(D+A) - Q_I) C`` by two first-order applications."""
    cs = coeffs if isinstance(coeffs, CoefficientSample) else coeffs.sample(grid.points)
    C = np.asarray(C, dtype=complex)
    W = dirac_apply(grid, C, cs.A) - _left(cs.Q_I, C)
    return dirac_apply(grid, W, cs.A) + _left(cs.Q, W)


def dirac_operator(grid, C, cs: CoefficientSample):
    """``L_V C = (P(D) + V) C``."""
    return dirac_apply(grid, C, cs.A) + _left(cs.Q, np.asarray(C, dtype=complex))


def transport_apply(grid, variant, Ct, cs: CoefficientSample):
    """``M_v Ct = 2 grad(rho_v).(D+A) Ct + (1/i) Lap(rho_v) Ct``."""
    _, _, grad, lap = variant_geometry(grid, variant)
    Ct = np.asarray(Ct, dtype=complex)
    nd = Ct.ndim
    G = grid.grad(Ct)
    g = grad.reshape(grad.shape[:3] + (1,) * (nd - 3) + (3,))
    A = cs.A.reshape(g.shape[:3] + (1,) * (nd - 3) + (3,))
    return 2 * np.sum(g * (-1j * G + A * Ct[..., None]), axis=-1) - 1j * _trail(lap, nd) * Ct


def solve_transport(grid, variant, G, phi_v):
    """Particular solution of ``M_v Ct = G`` via ``Ct = r^{-1/2} e^{i phi_v} B``.

    ``B`` solves ``zeta_v . grad B = (i z_v / (2 s)) r^{1/2} e^{-i phi_v} G`` on
    each slice.
    """
    v = get_variant(variant)
    _, zv, _, _ = variant_geometry(grid, v)
    G = np.asarray(G, dtype=complex)
    nd = G.ndim
    r = grid.r
    pre = (1j * zv / (2 * v.sign)) * np.sqrt(r) * np.exp(-1j * phi_v)
    B = grid.dbar_solve(_trail(pre, nd) * G, sign=-1 if v.bar else 1)
    return _trail(r**-0.5 * np.exp(1j * phi_v), nd) * B


def phase_transport(grid: CylinderGrid, cs: CoefficientSample, bar=False):
    """``phi`` with ``zeta . (grad phi + A) = 0`` (or ``conj(zeta)`` if ``bar``)."""
    zeta = grid.coords.zeta
    if bar:
        zeta = np.conj(zeta)
    return grid.dbar_solve(-np.sum(zeta * cs.A, axis=-1), sign=-1 if bar else 1)


# --------------------------------------------------------------------------
# the ansatz


@dataclass
class CGOAnsatz:
    variant: Variant
    grid: CylinderGrid
    coeffs: Coefficients
    order: int
    h: float | None
    phi_t: np.ndarray  # the variant's phase correction
    amplitude: np.ndarray  # a (or conj(a)) on the grid
    Ct: list  # internal amplitudes Ct_0..Ct_{order-1}
    C: list  # C_0..C_order
    sample: CoefficientSample = field(repr=False)

    @property
    def grad_rho(self):
        return variant_geometry(self.grid, self.variant)[2]

    def stack(self, h):
        return sum(h**j * Cj for j, Cj in enumerate(self.C))

    def conjugated_residual(self, h):
        """``e^{rho_v/h} L_V (e^{-rho_v/h} sum h^j C_j) = (L_V + (i/h) P(grad rho_v)) sum h^j C_j``."""
        S = self.stack(h)
        P = cl.p_dirac(self.grad_rho)
        return dirac_operator(self.grid, S, self.sample) + (1j / h) * (P @ S)

    def residual_norm(self, h):
        return self.grid.l2_norm(self.conjugated_residual(h))

    def exponent(self, points=None):
        """``-rho_v`` on the grid (the solution is ``exp(exponent/h) * stack``)."""
        sc = self.grid.coords if points is None else self.grid.logphase.special(points)
        rho = np.log(sc.z)
        if self.variant.bar:
            rho = np.conj(rho)
        return self.variant.sign * -rho

    def solution(self, h):
        """``exp(-rho_v/h) sum h^j C_j``; overflows for small h on far domains."""
        return np.exp(self.exponent() / h)[..., None, None] * self.stack(h)

    def sup_norms(self):
        return [float(np.max(np.abs(c[self.grid.mask]))) for c in self.Ct]


def _shift_op(grid, Ct, cs):
    """``(1/i)(P(D+A) - Q_I) Ct``."""
    return -1j * (dirac_apply(grid, Ct, cs.A) - cs.Q_I @ Ct)


def build_ansatz(variant, grid: CylinderGrid, coeffs: Coefficients, amplitude=None, order=3, h=None):
    """Build the truncated CGO amplitude stack up to ``order`` (0..3 or higher)."""
    v = get_variant(variant)
    if order < 0:
        raise ValueError("order must be nonnegative")
    if amplitude is None:
        amplitude = HolomorphicAmplitude()
    cs = coeffs.sample(grid.points)
    phi = phase_transport(grid, cs, bar=v.bar)
    amp = amplitude if not v.bar else amplitude.conj()
    sc = grid.coords
    a = amp.values_zt(sc.z, sc.theta)
    _, _, grad, _ = variant_geometry(grid, v)
    P = cl.p_dirac(grad)
    Ct0 = (grid.r**-0.5 * np.exp(1j * phi) * a)[..., None, None] * cl.I4
    Ct = [Ct0]
    C = [P @ Ct0]
    for j in range(1, order + 1):
        shifted = _shift_op(grid, Ct[j - 1], cs)
        if j < order:
            G = 1j * apply_schrodinger(grid, Ct[j - 1], cs)
            Ct.append(solve_transport(grid, v, G, phi))
            C.append(shifted + P @ Ct[j])
        else:
            C.append(shifted)
    if order == 0:
        Ct = Ct[:1]
    return CGOAnsatz(v, grid, coeffs, order, h, phi, a, Ct[: max(order, 1)], C, cs)


@dataclass
class ResidualRow:
    variant: str
    order: int
    h: float
    residual: float


def residual_scan(grid, coeffs, h_grid, orders=(0, 1, 2, 3), variants=("minus_rho",), amplitude=None):
    """Conjugated-residual norms for every (variant, order, h) and fitted slopes.

    Returns ``(rows, slopes)`` where ``slopes[(variant, order)]`` is the
    least-squares slope of log residual against log h and
    ``monotone[variant]`` reports whether slopes increase with order.
    """
    from .fitting import loglog_slope

    rows, slopes = [], {}
    top = max(orders)
    for name in variants:
        full = build_ansatz(name, grid, coeffs, amplitude, order=top)
        for m in orders:
            ans = full if m == top else truncate(full, m)
            vals = [ans.residual_norm(h) for h in h_grid]
            rows += [ResidualRow(name, m, float(h), float(r)) for h, r in zip(h_grid, vals)]
            slopes[(name, m)] = loglog_slope(h_grid, vals)
    monotone = {
        name: bool(np.all(np.diff([slopes[(name, m)] for m in sorted(orders)]) > 0)) for name in variants
    }
    return rows, slopes, monotone


def truncate(ans: CGOAnsatz, order: int) -> CGOAnsatz:
    """Re-truncate a built ansatz at a lower order without re-solving transport equations."""
    if order > ans.order:
        raise ValueError("cannot raise the order by truncation")
    if order == ans.order:
        return ans
    grid, cs = ans.grid, ans.sample
    C = list(ans.C[:order])
    C.append(_shift_op(grid, ans.Ct[order - 1], cs) if order > 0 else ans.C[0])
    if order == 0:
        C = [ans.C[0]]
    return CGOAnsatz(
        ans.variant, grid, ans.coeffs, order, ans.h, ans.phi_t, ans.amplitude, ans.Ct[: max(order, 1)], C, cs
    )
