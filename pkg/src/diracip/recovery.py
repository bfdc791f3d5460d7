"""Integral identity, CGO pair integrals, plane transforms and their discrete inversion."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import clifford as cl
from .cgo import build_ansatz
from .coefficients import Coefficients
from .expr import as_scalar, as_vector
from .geometry import BoundaryPatch, DomainGrid, Frame, LogPhase
from .solver import (
    assemble,
    assemble_decoupled,
    boundary_inner,
    boundary_samples,
    inner,
    normal_derivative,
)
from .spectral import CylinderGrid

WEDGE = 2j  # dz-bar ^ dz = 2i dA


# --------------------------------------------------------------------------
# the boundary integral identity


def make_system(grid: DomainGrid, coeffs: Coefficients, solver="first_order", **kw):
    """Factorized forward solver: ``first_order`` (the coupled Dirac system) or ``decoupled``."""
    if solver == "first_order":
        return assemble(grid, coeffs, **kw)
    if solver == "decoupled":
        return assemble_decoupled(grid, coeffs, **kw)
    raise ValueError(f"unknown solver {solver!r}")


@dataclass
class IdentityResult:
    lhs: complex  # ((V1 - V2) u1 | u2)
    rhs: complex  # -((1/q1-) d_nu u_+ | u2+)_{Gamma^c}
    scale: float  # |(V1 - V2) u1| |u2|
    relation_error: float  # max |i q1- (sigma.nu) u_- + d_nu u_+| on the boundary
    relation_scale: float  # max |d_nu u1+|
    gamma_mismatch: float  # max |u_-| on Gamma (zero when the Cauchy data agree)
    n: int
    solver: str

    @property
    def gap(self):
        """``|lhs - rhs|`` relative to the Cauchy-Schwarz scale."""
        return abs(self.lhs - self.rhs) / self.scale if self.scale > 0 else abs(self.lhs - self.rhs)

    @property
    def gap_lhs(self):
        """``|lhs - rhs| / |lhs|``; only meaningful when ``lhs`` is not itself at the noise level."""
        return abs(self.lhs - self.rhs) / abs(self.lhs) if self.lhs != 0 else float("inf")

    @property
    def relation_relative(self):
        return self.relation_error / self.relation_scale if self.relation_scale > 0 else self.relation_error


def boundary_trace(grid: DomainGrid, f):
    """Dirichlet data ``(n_boundary_nodes, 2)`` from a callable ``f(points) -> (..., 2)`` or an array."""
    if callable(f):
        pts = grid.nodes.reshape(-1, 3)[grid.on_boundary.ravel()]
        return np.asarray(f(pts), dtype=complex)
    return np.asarray(f, dtype=complex)


def identity_check(grid: DomainGrid, coeffs1: Coefficients, coeffs2: Coefficients, f1, f2,
                   gamma: BoundaryPatch | None = None, solver="first_order", systems=None) -> IdentityResult:
    """Evaluate both sides of ``((V1-V2)u1|u2) = -((1/q1-) d_nu u_+ | u2+)_{Gamma^c}``.

    ``u_j`` solve the ``V_j`` systems with Dirichlet data ``f_j``; the matched
    solution ``u2~`` solves the ``V2`` system with ``u2~+ = u1+`` on the
    boundary, and ``u = u1 - u2~``. ``gamma=None`` means ``Gamma`` is empty (the
    identity then needs no agreement of Cauchy data).
    """
    S1, S2 = systems if systems is not None else (make_system(grid, coeffs1, solver), make_system(grid, coeffs2, solver))
    u1 = S1.solve(boundary_trace(grid, f1))
    u2 = S2.solve(boundary_trace(grid, f2))
    ut = S2.solve(S1.boundary_values(u1)[:, :2])
    pts = grid.nodes.reshape(-1, 3)
    dV = (coeffs1.potential(pts) - coeffs2.potential(pts)).reshape(grid.shape + (4, 4))
    Vu = np.einsum("...ij,...j->...i", dV, u1)
    lhs = inner(grid, Vu, u2)
    u = u1 - ut
    dn = normal_derivative(grid, u)[:, :2]
    qb = coeffs1.q_minus(grid.boundary_points)
    u2b = boundary_samples(grid, u2)[:, :2]
    gmask = np.zeros(len(grid.boundary_points), dtype=bool) if gamma is None else gamma.mask
    rhs = -boundary_inner(grid, dn / qb[:, None], u2b, mask=~gmask)
    scale = float(np.sqrt(inner(grid, Vu, Vu).real * inner(grid, u2, u2).real))
    ub = boundary_samples(grid, u)
    rel = 1j * qb[:, None] * np.einsum("mij,mj->mi", cl.sigma_dot(grid.boundary_normals), ub[:, 2:]) + dn
    du1 = normal_derivative(grid, u1)[:, :2]
    mism = float(np.max(np.abs(ub[gmask, 2:]), initial=0.0))
    return IdentityResult(complex(lhs), complex(rhs), scale, float(np.max(np.abs(rel))), float(np.max(np.abs(du1))),
                          mism, grid.n, solver)


# --------------------------------------------------------------------------
# CGO pairs in the volume identity


@dataclass
class CGOPair:
    """``U1 = e^{rho/h} S1`` for ``V1`` and ``U2 = e^{-conj(rho)/h} S2`` for ``V2``."""

    grid: CylinderGrid
    coeffs1: Coefficients
    coeffs2: Coefficients
    U1: object
    U2: object

    def potential_difference(self):
        pts = self.grid.points.reshape(-1, 3)
        dV = self.coeffs1.potential(pts) - self.coeffs2.potential(pts)
        return dV.reshape(self.grid.shape + (4, 4))

    def integrand(self, h):
        S1 = self.U1.stack(h)
        S2 = self.U2.stack(h)
        return cl.dagger(S2) @ self.potential_difference() @ S1

    def integral(self, h):
        """``int U2^* (V1 - V2) U1 dx``; the exponentials cancel exactly."""
        return self.grid.integrate(self.integrand(h))

    def phases(self):
        """``(phi_1, phi_2)`` with ``zeta.(grad phi_j + A_j) = 0``."""
        return self.U1.phi_t, np.conj(self.U2.phi_t)

    def amplitudes(self):
        return self.U1.amplitude, np.conj(self.U2.amplitude)

    def magnetic_limit(self):
        """``-2 int P(zeta)(zeta.(A1-A2)) e^{i(phi1-phi2)} a1 a2 z^-2 r^-1 dx``, evaluated directly."""
        g = self.grid
        pts = g.points.reshape(-1, 3)
        dA = (self.coeffs1.A(pts) - self.coeffs2.A(pts)).reshape(g.shape + (3,))
        sc = g.coords
        p1, p2 = self.phases()
        a1, a2 = self.amplitudes()
        s = cl.bdot(sc.zeta, dA) * np.exp(1j * (p1 - p2)) * a1 * a2 / (sc.z**2 * g.r)
        return -2 * g.integrate(s[..., None, None] * cl.p_dirac(sc.zeta))


def pair_cgo(grid: CylinderGrid, coeffs1: Coefficients, coeffs2: Coefficients, amplitude1=None, amplitude2=None,
             order=1) -> CGOPair:
    """Build the CGO pair used in the volume identity.

    ``amplitude2`` is the ``a_2`` of ``U2^*``; the conjugate variant is built
    from it so that ``U2^*`` carries ``a_2`` itself.
    """
    U1 = build_ansatz("plus_rho", grid, coeffs1, amplitude1, order=order)
    U2 = build_ansatz("minus_rhobar", grid, coeffs2, amplitude2, order=order)
    return CGOPair(grid, coeffs1, coeffs2, U1, U2)


def reduction_checks(zeta, A, grad_phi, q1, q2, rng=None):
    """Nodewise residuals of the cancellations in the volume identity.

    ``q1, q2`` are ``(q_+, q_-)`` pairs of arrays. Returns relative sizes of
    ``P(zeta) Qh P(zeta)``, of ``P(zeta) Qh P(b) + P(b) Qh P(zeta) - 2 (zeta.b) Qh_I``
    with ``b = grad phi + A``, and of ``-Qh Q1_I - Q2 Qh_I - qh I4``.
    """
    Q1 = cl.q_matrix(*q1)
    Q2 = cl.q_matrix(*q2)
    Qh = Q1 - Q2
    QhI = cl.q_flip(Qh)
    Pz = cl.p_dirac(zeta)
    b = np.asarray(grad_phi) + np.asarray(A)
    Pb = cl.p_dirac(b)
    ref = np.max(np.abs(Pz @ Qh), initial=1e-300) * max(1.0, np.max(np.abs(Pz)))
    annih = np.max(np.abs(Pz @ Qh @ Pz)) / ref
    sym = Pz @ Qh @ Pb + Pb @ Qh @ Pz - 2 * cl.bdot(zeta, b)[..., None, None] * QhI
    anti = np.max(np.abs(sym)) / max(np.max(np.abs(Pz @ Qh @ Pb)), 1e-300)
    qh = q2[0] * q2[1] - q1[0] * q1[1]
    prod = -Qh @ cl.q_flip(Q1) - Q2 @ QhI - np.asarray(qh)[..., None, None] * cl.I4
    qq = np.max(np.abs(prod)) / max(np.max(np.abs(qh)), 1e-300)
    return {"annihilation": float(annih), "anticommutator": float(anti), "q_product": float(qq),
            "zeta_dot_b": float(np.max(np.abs(cl.bdot(zeta, b))))}


# --------------------------------------------------------------------------
# plane families and transforms


@dataclass
class PlaneFamily:
    """Half-planes ``x0 + s e1 + t e_r(theta)``, ``t > 0``, one per ``(x0, omega, theta)``."""

    x0: np.ndarray  # (m, 3)
    omega: np.ndarray  # (m, 3)
    theta: np.ndarray  # (m,)
    reference_point: np.ndarray | None = None

    def __len__(self):
        return len(self.theta)

    @classmethod
    def lattice(cls, x0, omega, domain: DomainGrid, offsets=(-1.0, -0.5, 0.0, 0.5, 1.0),
                depths=(-0.5, -0.25, 0.0, 0.25, 0.5), n_theta=64, pad=0.02, reference_point=None):
        """``len(offsets) x len(depths) x n_theta`` lattice of pole perturbations.

        The pole moves by ``offsets`` along the frame's second axis and by
        ``depths`` along its third; for each pole ``theta`` runs over the
        angles subtended by the domain. Poles inside the hull are rejected.
        """
        base = LogPhase(x0, omega, reference_point)
        R = base.frame.R
        X0, W, T = [], [], []
        for a in offsets:
            for b in depths:
                p = base.x0 + a * R[1] + b * R[2]
                if domain.hull_contains(p):
                    raise ValueError(f"perturbed pole {p} lies in the hull of the domain")
                lp = LogPhase(p, R[0], reference_point)
                th = lp.special(domain.hull_extent()).theta
                lo, hi = th.min(), th.max()
                span = hi - lo
                ts = np.linspace(lo - pad * span, hi + pad * span, n_theta)
                X0 += [p] * n_theta
                W += [R[0]] * n_theta
                T += list(ts)
        rp = None if reference_point is None else np.asarray(reference_point, dtype=float)
        return cls(np.array(X0), np.array(W), np.array(T), rp)

    def frame(self, i) -> Frame:
        return Frame.build(self.x0[i], self.omega[i], self.reference_point)

    def axes(self, i):
        """World vectors ``(e1, e_r)`` spanning plane ``i``."""
        R = self.frame(i).R
        return R[0], np.cos(self.theta[i]) * R[1] + np.sin(self.theta[i]) * R[2]


@dataclass
class PlaneRule:
    """Tensor Gauss-Legendre rule on the ``(s, t)`` rectangle covering one plane's slice of the domain."""

    points: np.ndarray  # (m, 3) world
    weights: np.ndarray  # (m,) area weights
    s: np.ndarray
    t: np.ndarray


def plane_rule(family: PlaneFamily, i, domain: DomainGrid, n_s=24, n_t=24, panels=4):
    """Quadrature on ``x0 + s e1 + t e_r`` over the bounding rectangle of the domain's slice."""
    e1, er = family.axes(i)
    ext = domain.hull_extent()
    d = ext - family.x0[i]
    s_lo, s_hi = (d @ e1).min(), (d @ e1).max()
    # for convex domains the slice lies within the projected extents
    t_lo, t_hi = max((d @ er).min(), 0.0), max((d @ er).max(), 0.0)
    if t_hi <= t_lo:
        return None

    def rule(a, b, n):
        x, w = np.polynomial.legendre.leggauss(n)
        e = np.linspace(a, b, panels + 1)
        xs = np.concatenate([(l + r) / 2 + (r - l) / 2 * x for l, r in zip(e[:-1], e[1:])])
        ws = np.concatenate([(r - l) / 2 * w for l, r in zip(e[:-1], e[1:])])
        return xs, ws

    s, ws = rule(s_lo, s_hi, n_s)
    t, wt = rule(t_lo, t_hi, n_t)
    S, Tt = np.meshgrid(s, t, indexing="ij")
    pts = family.x0[i] + S[..., None] * e1 + Tt[..., None] * er
    return PlaneRule(pts.reshape(-1, 3), np.outer(ws, wt).reshape(-1), S.reshape(-1), Tt.reshape(-1))


@dataclass
class TransformSamples:
    family: PlaneFamily
    values: np.ndarray  # area-measure convention
    kind: str
    meta: dict = field(default_factory=dict)
    factor: complex = WEDGE  # multiply by this for the dz-bar ^ dz convention

    def wedge(self):
        return self.factor * self.values

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x0_1", "x0_2", "x0_3", "omega_1", "omega_2", "omega_3", "theta", "re", "im"])
        f = self.family
        for i in range(len(f)):
            w.writerow([repr(float(v)) for v in (*f.x0[i], *f.omega[i], f.theta[i], self.values[i].real,
                                                   self.values[i].imag)])
        return buf.getvalue()


def _field_on(F, pts, domain):
    vals = np.asarray(F(pts))
    if domain is not None:
        inside = domain.contains(pts)
        vals = vals * (inside if vals.ndim == 1 else inside[:, None])
    return vals


def two_plane_transform(F, family: PlaneFamily, domain: DomainGrid, g=None, weight=None, xi=None,
                        n_s=24, n_t=24, panels=4) -> TransformSamples:
    """Plane integrals of a vector field ``F`` (callable, extended by zero outside ``domain``).

    Default: ``int F.(e1 + i e_r) g(z) weight dA`` with ``z = s + i t``.
    With ``xi = (c1, c2)`` the in-plane direction ``c1 e1 + c2 e_r`` is used
    instead of ``e1 + i e_r``. ``g`` maps ``z`` to a complex factor and
    ``weight`` maps world points to one; values are in the area-measure
    convention (multiply by ``WEDGE`` for ``dz-bar ^ dz``).
    """
    F = as_vector(F) if not callable(F) else F
    out = np.zeros(len(family), dtype=complex)
    for i in range(len(family)):
        rule = plane_rule(family, i, domain, n_s, n_t, panels)
        if rule is None:
            continue
        e1, er = family.axes(i)
        d = e1 + 1j * er if xi is None else xi[0] * e1 + xi[1] * er
        vals = _field_on(F, rule.points, domain) @ d
        if g is not None:
            vals = vals * g(rule.s + 1j * rule.t)
        if weight is not None:
            vals = vals * weight(rule.points)
        out[i] = np.sum(rule.weights * vals)
    return TransformSamples(family, out, "two_plane" if xi is None else "directional",
                            {"xi": None if xi is None else tuple(xi)})


def scalar_plane_transform(f, family: PlaneFamily, domain: DomainGrid, n_s=24, n_t=24, panels=4) -> TransformSamples:
    """``int_{P} f dA`` for a scalar field ``f``."""
    f = as_scalar(f) if not callable(f) else f
    out = np.zeros(len(family), dtype=complex)
    for i in range(len(family)):
        rule = plane_rule(family, i, domain, n_s, n_t, panels)
        if rule is not None:
            out[i] = np.sum(rule.weights * _field_on(f, rule.points, domain))
    return TransformSamples(family, out, "scalar")


# --------------------------------------------------------------------------
# slice transforms of q_-


def _half_plane_rule(lp: LogPhase, domain: DomainGrid, n=48, panels=4):
    ext = lp.special(domain.hull_extent())
    sc_b = lp.special(domain.boundary_points) if domain.kind == "ball" else ext
    x_lo, x_hi = min(ext.x1.min(), sc_b.x1.min()), max(ext.x1.max(), sc_b.x1.max())
    r_hi = max(ext.r.max(), sc_b.r.max())
    r_lo = max(1e-9, (np.linalg.norm(domain.center - lp.x0) - np.max(domain.size)) * 0.0)

    def rule(a, b):
        x, w = np.polynomial.legendre.leggauss(n)
        e = np.linspace(a, b, panels + 1)
        return (np.concatenate([(l + r) / 2 + (r - l) / 2 * x for l, r in zip(e[:-1], e[1:])]),
                np.concatenate([(r - l) / 2 * w for l, r in zip(e[:-1], e[1:])]))

    return rule(x_lo, x_hi), rule(r_lo, r_hi)


def slice_points(lp: LogPhase, x1, r, theta):
    loc = np.stack([x1, r * np.cos(theta), r * np.sin(theta)], axis=-1)
    return lp.frame.world(loc)


@dataclass
class SliceTransform:
    theta: np.ndarray
    values: np.ndarray  # int int q r^-1 dx1 dr (area convention)
    dtheta_values: np.ndarray  # int int d_theta q r^-1 dx1 dr
    factor: complex = WEDGE


def slice_qminus_transform(q_diff, logphase: LogPhase, domain: DomainGrid, thetas, n=48, panels=4) -> SliceTransform:
    """Per-angle ``int q r^-1 dx1 dr`` and ``int (d_theta q) r^-1 dx1 dr`` over the half-plane slices.

    ``d_theta q = r e_theta . grad q`` so the second integrand is ``e_theta . grad q``.
    ``q_diff`` is a scalar field supported in the domain.
    """
    q = as_scalar(q_diff)
    (x, wx), (r, wr) = _half_plane_rule(logphase, domain, n, panels)
    X, Rr = np.meshgrid(x, r, indexing="ij")
    W = np.outer(wx, wr)
    vals, dvals = [], []
    R = logphase.frame.R
    for th in np.atleast_1d(thetas):
        pts = slice_points(logphase, X, Rr, np.full_like(X, th))
        inside = domain.contains(pts)
        et = -np.sin(th) * R[1] + np.cos(th) * R[2]
        vals.append(np.sum(W * inside * q(pts) / Rr))
        dvals.append(np.sum(W * inside * (q.grad(pts) @ et)))
    return SliceTransform(np.atleast_1d(np.asarray(thetas, dtype=float)), np.array(vals, dtype=complex),
                          np.array(dvals, dtype=complex))


def theta_forms(q_diff, logphase: LogPhase, domain: DomainGrid, b1, n_theta=64, n=48, panels=4, pad=0.05):
    """Both sides of the angular integration by parts for a weight ``b1(theta)``.

    ``form_b = int [i (sigma.zeta) b1' - (sigma.e_theta) b1] I(theta) dtheta`` and
    ``form_d = -i int (sigma.zeta) b1 J(theta) dtheta``, where ``I`` and ``J`` are
    the slice integrals of ``q r^-1`` and ``(d_theta q) r^-1``. They agree when
    ``I`` vanishes at the ends of the angular range.
    """
    from .cauchy import ThetaFunction

    b1 = b1 if isinstance(b1, ThetaFunction) else ThetaFunction(b1)
    th = logphase.special(domain.hull_extent()).theta
    lo, hi = th.min(), th.max()
    span = hi - lo
    t, w = np.polynomial.legendre.leggauss(n_theta)
    a, b = lo - pad * span, hi + pad * span
    ts = (a + b) / 2 + (b - a) / 2 * t
    ws = (b - a) / 2 * w
    st = slice_qminus_transform(q_diff, logphase, domain, ts, n, panels)
    R = logphase.frame.R
    er = np.cos(ts)[:, None] * R[1] + np.sin(ts)[:, None] * R[2]
    et = -np.sin(ts)[:, None] * R[1] + np.cos(ts)[:, None] * R[2]
    zeta = R[0] + 1j * er
    sz, se = cl.sigma_dot(zeta), cl.sigma_dot(et)
    bv, db = b1(ts), b1.derivative(ts)
    form_b = np.einsum("m,mij->ij", ws * st.values, 1j * sz * db[:, None, None] - se * bv[:, None, None])
    form_d = -1j * np.einsum("m,mij->ij", ws * st.dtheta_values * bv, sz)
    return form_b, form_d


# --------------------------------------------------------------------------
# discrete inversion on a slice


@dataclass
class SliceGrid:
    """``m x m`` node grid on the plane ``{y1 = 0}`` of a frame, with bilinear hat functions."""

    frame: Frame
    lo: np.ndarray  # (2,) lower corner in (y2, y3)
    hi: np.ndarray
    m: int = 32

    @property
    def spacing(self):
        return (self.hi - self.lo) / (self.m - 1)

    @property
    def axes(self):
        return [np.linspace(self.lo[k], self.hi[k], self.m) for k in range(2)]

    @property
    def nodes(self):
        a, b = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([a, b], axis=-1)

    def bilinear(self, y):
        """Flat node indices ``(m_pts, 4)`` and weights for local ``y = (y2, y3)``; outside points get zero weight."""
        u = (y - self.lo) / self.spacing
        i0 = np.floor(u).astype(int)
        f = u - i0
        ok = np.all((u >= 0) & (u <= self.m - 1), axis=-1)
        i0 = np.clip(i0, 0, self.m - 2)
        f = np.where(ok[:, None], u - i0, 0.0)
        idx, wts = [], []
        for a in (0, 1):
            for b in (0, 1):
                idx.append((i0[:, 0] + a) * self.m + (i0[:, 1] + b))
                wa = f[:, 0] if a else 1 - f[:, 0]
                wb = f[:, 1] if b else 1 - f[:, 1]
                wts.append(np.where(ok, wa * wb, 0.0))
        return np.stack(idx, axis=-1), np.stack(wts, axis=-1)


def slice_grid_for(domain: DomainGrid, frame: Frame, m=32, pad=0.0):
    y = frame.local(domain.hull_extent())
    lo, hi = y[:, 1:].min(axis=0), y[:, 1:].max(axis=0)
    span = hi - lo
    return SliceGrid(frame, lo - pad * span, hi + pad * span, m)


def plane_operator(family: PlaneFamily, domain: DomainGrid, sg: SliceGrid, profile, component=None,
                   n_s=24, n_t=24, panels=4):
    """Dense matrix of plane integrals of ``profile(y1) * hat_j(y2, y3)`` (times a frame-axis component).

    ``component=None`` integrates the scalar field; ``component=k`` (1 or 2)
    integrates ``e_r . (profile * hat_j * R[k])``.
    """
    N = sg.m * sg.m
    M = np.zeros((len(family), N))
    R = sg.frame.R
    for i in range(len(family)):
        rule = plane_rule(family, i, domain, n_s, n_t, panels)
        if rule is None:
            continue
        y = sg.frame.local(rule.points)
        idx, wts = sg.bilinear(y[:, 1:])
        c = rule.weights * profile(y[:, 0]) * domain.contains(rule.points)
        if component is not None:
            c = c * (family.axes(i)[1] @ R[component])
        M[i] = np.bincount(idx.ravel(), weights=(wts * c[:, None]).ravel(), minlength=N)
    return M


@dataclass
class Inversion:
    field: np.ndarray  # (m, m) or (m, m, k)
    lam: float
    residual: float
    solution_norm: float
    rank: int
    null_dim: int
    singular_values: np.ndarray = field(repr=False)
    lcurve: tuple = field(repr=False, default=())


def _lcurve_corner(rho, eta, lams):
    """Index of maximal curvature of the log-log L-curve ``(rho, eta)``."""
    x, y = np.log(np.maximum(rho, 1e-300)), np.log(np.maximum(eta, 1e-300))
    t = np.log(lams)
    dx, dy = np.gradient(x, t), np.gradient(y, t)
    ddx, ddy = np.gradient(dx, t), np.gradient(dy, t)
    kappa = (dx * ddy - dy * ddx) / np.maximum((dx**2 + dy**2) ** 1.5, 1e-300)
    return int(np.argmax(kappa))


def tikhonov_lcurve(M, b, lams=None, rank_tol=1e-10):
    """Tikhonov solution ``argmin |Mx - b|^2 + lam^2 |x|^2`` with ``lam`` at the L-curve corner."""
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    rank = int(np.sum(s > rank_tol * s[0]))
    beta = U.T.conj() @ b
    if np.linalg.norm(b) == 0:
        return np.zeros(M.shape[1], dtype=b.dtype), 0.0, 0.0, 0.0, rank, M.shape[1] - rank, s, ()
    if lams is None:
        lams = np.logspace(np.log10(s[0]) - 7, np.log10(s[0]), 80)
    out_r = np.linalg.norm(b - U @ beta)
    rho, eta = [], []
    for lam in lams:
        f = s**2 / (s**2 + lam**2)
        rho.append(np.sqrt(np.linalg.norm((1 - f) * beta) ** 2 + out_r**2))
        eta.append(np.linalg.norm(f * beta / s))
    rho, eta = np.array(rho), np.array(eta)
    k = _lcurve_corner(rho, eta, lams)
    lam = lams[k]
    f = s**2 / (s**2 + lam**2)
    x = Vt.T.conj() @ (f * beta / s)
    return x, float(lam), float(rho[k]), float(eta[k]), rank, M.shape[1] - rank, s, (lams, rho, eta)


def invert_plane_transform(samples, family: PlaneFamily, domain: DomainGrid, sg: SliceGrid, profile,
                           kind="scalar", lam=None, oversampling=4.0, **quad) -> Inversion:
    """Reconstruct a slice field from plane integrals by Tikhonov-regularized least squares.

    The field model is ``profile(y1) f(y2, y3)`` with ``f`` bilinear on ``sg``.
    ``kind="scalar"`` reconstructs ``f`` from scalar plane integrals;
    ``kind="vector"`` reconstructs the in-slice components ``(f2, f3)`` from
    plane integrals of ``e_r . F``.
    """
    b = np.asarray(samples.values if isinstance(samples, TransformSamples) else samples)
    if kind == "scalar":
        M = plane_operator(family, domain, sg, profile, None, **quad)
    elif kind == "vector":
        M = np.hstack([plane_operator(family, domain, sg, profile, k, **quad) for k in (1, 2)])
    else:
        raise ValueError(f"unknown inversion kind {kind!r}")
    if len(b) < oversampling * M.shape[1]:
        raise ValueError(f"family too small: {len(b)} samples for {M.shape[1]} unknowns")
    lams = None if lam is None else np.array([lam])
    if lam is None:
        x, lam_, res, nrm, rank, nd, s, lc = tikhonov_lcurve(M, b)
    else:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
        f = s**2 / (s**2 + lam**2)
        x = Vt.T @ (f * (U.T @ b) / s)
        rank = int(np.sum(s > 1e-10 * s[0]))
        lam_, res, nrm, nd, lc = lam, float(np.linalg.norm(M @ x - b)), float(np.linalg.norm(x)), M.shape[1] - rank, ()
    m = sg.m
    fld = x.reshape(m, m) if kind == "scalar" else np.stack([x[: m * m].reshape(m, m), x[m * m:].reshape(m, m)], -1)
    return Inversion(fld, lam_, res, nrm, rank, nd, s, lc)


def slice_curl(sg: SliceGrid, F):
    """``d2 F3 - d3 F2`` of an in-slice vector field on the node grid (centred differences)."""
    d = sg.spacing
    return np.gradient(F[..., 1], d[0], axis=0) - np.gradient(F[..., 0], d[1], axis=1)


def slice_norm(sg: SliceGrid, f):
    d = sg.spacing
    return float(np.sqrt(np.sum(np.abs(f) ** 2) * d[0] * d[1]))


# --------------------------------------------------------------------------
# binary grid files

GRID_MAGIC = b"DIPGRID1"


def write_grid(path, data, spacing, origin):
    """Write a real array: magic, ``uint32 ndim``, ``uint64 dims``, ``float64 spacing``, ``float64 origin``, row-major ``float64`` body.

    All fields are little-endian.
    """
    a = np.asarray(data)
    if np.iscomplexobj(a):
        raise TypeError("grid files hold real doubles; write real and imaginary parts separately")
    a = np.ascontiguousarray(a, dtype="<f8")
    nd = a.ndim
    spacing = np.broadcast_to(np.asarray(spacing, dtype="<f8"), (nd,))
    origin = np.broadcast_to(np.asarray(origin, dtype="<f8"), (nd,))
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<I", nd))
        fh.write(np.asarray(a.shape, dtype="<u8").tobytes())
        fh.write(spacing.tobytes())
        fh.write(origin.tobytes())
        fh.write(a.tobytes(order="C"))


def read_grid(path):
    """Return ``(data, spacing, origin)`` from a file written by :func:`write_grid`."""
    with open(path, "rb") as fh:
        if fh.read(len(GRID_MAGIC)) != GRID_MAGIC:
            raise ValueError("not a grid file")
        (nd,) = struct.unpack("<I", fh.read(4))
        dims = np.frombuffer(fh.read(8 * nd), dtype="<u8").astype(int)
        spacing = np.frombuffer(fh.read(8 * nd), dtype="<f8").copy()
        origin = np.frombuffer(fh.read(8 * nd), dtype="<f8").copy()
        body = np.frombuffer(fh.read(), dtype="<f8")
    if body.size != int(np.prod(dims)):
        raise ValueError("grid file body does not match its header")
    return body.reshape(tuple(dims)).copy(), spacing, origin
