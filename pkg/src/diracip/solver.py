"""Finite-difference forward solver for ``L_V u = (P(D) + V) u = s`` with ``u_+ = f`` on the boundary.

Discretization on the nodes of a box:

* ``D + A`` uses gauge-covariant differences. The magnetic potential enters only
  through link phases ``exp(i int A_k ds)`` along grid edges, so the scheme maps
  solutions to solutions under ``u -> exp(-ip) u``, ``A -> A + grad p`` exactly
  (up to the quadrature of the link integrals).
* Interior nodes carry all four equations plus a covariant grid-scale
  stabilization ``i s sum_k (2 - T_k - T_{-k})`` that suppresses the
  checkerboard modes of centred differences. It is ``O(spacing^2)`` on smooth
  fields, so it does not reduce the order of the scheme.
* Boundary nodes carry the Dirichlet condition on ``u_+`` and the first block
  row ``sigma.(D+A) u_- + q_+ u_+ = s_+`` closed with one-sided second-order
  differences.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import clifford as cl
from .coefficients import Coefficients
from .expr import ScalarField, as_scalar
from .geometry import BoundaryPatch, DomainGrid, build_domain

ALPHA = cl.p_dirac(np.eye(3))
_GL = np.polynomial.legendre.leggauss(8)


class SingularSystemError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# lattice helpers


def _check_box(grid: DomainGrid):
    if grid.kind != "box":
        raise ValueError("the forward solver works on box domains")


def link_integrals(grid: DomainGrid, A):
    """``theta[k, i, j, l] = int A_k`` along the edge from node ``(i, j, l)`` in direction ``k``.

    Entries with no forward neighbour are zero.
    """
    _check_box(grid)
    nodes = grid.nodes
    n = grid.n
    t, w = _GL
    out = np.zeros((3, n, n, n))
    for k in range(3):
        d = grid.spacing[k]
        sl = [slice(None)] * 3
        sl[k] = slice(0, n - 1)
        base = nodes[tuple(sl)]
        acc = 0.0
        for tj, wj in zip(t, w):
            p = base.copy()
            p[..., k] += d * (tj + 1) / 2
            acc = acc + wj * A(p)[..., k]
        out[(k,) + tuple(sl)] = acc * d / 2
    return out


def _flat(n):
    return np.arange(n**3).reshape(n, n, n)


def covariant_difference_matrices(grid: DomainGrid, theta=None):
    """Sparse ``(d_k + i A_k)`` for k = 0, 1, 2: centred inside, one-sided at the ends."""
    n = grid.n
    idx = _flat(n)
    if theta is None:
        theta = np.zeros((3, n, n, n))
    mats = []
    for k in range(3):
        d = grid.spacing[k]
        L = np.exp(1j * theta[k])
        rows, cols, vals = [], [], []

        def take(a, lo, hi):
            s = [slice(None)] * 3
            s[k] = slice(lo, hi)
            return a[tuple(s)].ravel()

        # centred: (T_k u - T_{-k} u) / 2d
        j = take(idx, 1, n - 1)
        jp = take(idx, 2, n)
        jm = take(idx, 0, n - 2)
        Lp = take(L, 1, n - 1)
        Lm = np.conj(take(L, 0, n - 2))
        rows += [j, j]
        cols += [jp, jm]
        vals += [Lp / (2 * d), -Lm / (2 * d)]
        # forward at index 0
        j0, j1, j2 = take(idx, 0, 1), take(idx, 1, 2), take(idx, 2, 3)
        L0, L1 = take(L, 0, 1), take(L, 1, 2)
        rows += [j0, j0, j0]
        cols += [j0, j1, j2]
        vals += [np.full(j0.size, -3 / (2 * d)), 4 * L0 / (2 * d), -L0 * L1 / (2 * d)]
        # backward at index n-1
        e0, e1, e2 = take(idx, n - 1, n), take(idx, n - 2, n - 1), take(idx, n - 3, n - 2)
        M1, M2 = np.conj(take(L, n - 2, n - 1)), np.conj(take(L, n - 3, n - 2))
        rows += [e0, e0, e0]
        cols += [e0, e1, e2]
        vals += [np.full(e0.size, 3 / (2 * d)), -4 * M1 / (2 * d), M1 * M2 / (2 * d)]
        mats.append(
            sps.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n**3, n**3)
            )
        )
    return mats


def stabilization_matrix(grid: DomainGrid, theta):
    """``sum_k (2 - T_k - T_{-k})`` on interior nodes (zero rows on the boundary)."""
    n = grid.n
    idx = _flat(n)
    inner = idx[1:-1, 1:-1, 1:-1].ravel()
    rows, cols, vals = [inner], [inner], [np.full(inner.size, 6.0 + 0j)]
    for k in range(3):
        L = np.exp(1j * theta[k])
        sp_ = [slice(1, -1)] * 3
        sm = [slice(1, -1)] * 3
        sl = [slice(1, -1)] * 3
        sp_[k] = slice(2, n)
        sm[k] = slice(0, n - 2)
        sl[k] = slice(0, n - 2)
        rows += [inner, inner]
        cols += [idx[tuple(sp_)].ravel(), idx[tuple(sm)].ravel()]
        vals += [-L[tuple([slice(1, -1)] * 3)].ravel(), -np.conj(L[tuple(sl)]).ravel()]
    return sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n**3, n**3))


def _blocks(diag_vals, block):
    """Sparse block-diagonal with node values times a fixed 4x4 block."""
    return sps.kron(sps.diags(diag_vals), sps.csr_matrix(block))


_PLUS = np.diag([1, 1, 0, 0]).astype(complex)
_MINUS = np.diag([0, 0, 1, 1]).astype(complex)


def dirac_matrix(grid: DomainGrid, coeffs: Coefficients, theta=None):
    """Sparse ``P(D+A) + Q`` with covariant differences on every node (no boundary closure)."""
    if theta is None:
        theta = link_integrals(grid, coeffs.A)
    Dk = covariant_difference_matrices(grid, theta)
    pts = grid.nodes.reshape(-1, 3)
    M = sum(sps.kron(-1j * Dk[k], sps.csr_matrix(ALPHA[k])) for k in range(3))
    M = M + _blocks(coeffs.q_plus(pts), _PLUS) + _blocks(coeffs.q_minus(pts), _MINUS)
    return M.tocsr()


# --------------------------------------------------------------------------
# the discrete system


@dataclass
class DiscreteDiracSystem:
    grid: DomainGrid
    coeffs: Coefficients
    stabilization: float
    theta: np.ndarray
    operator: sps.csr_matrix  # P(D+A) + Q on all nodes
    matrix: sps.csc_matrix  # the square system actually solved
    boundary_index: np.ndarray  # flat indices of boundary nodes (sorted)
    interior_rows: np.ndarray
    shift: float = 0.0
    method: str = "direct"
    _lu: object = field(default=None, repr=False)
    _prec: object = field(default=None, repr=False)

    @property
    def n_nodes(self):
        return self.grid.n**3

    @property
    def n_boundary(self):
        return self.boundary_index.size

    def rhs(self, f, source=None):
        """Assemble the right-hand side for boundary data ``f`` (``(n_boundary, 2)``) and a source."""
        n = self.n_nodes
        b = np.zeros(4 * n, dtype=complex)
        if source is not None:
            s = np.asarray(source, dtype=complex).reshape(n, 4)
            b[self.interior_rows] = s.reshape(-1)[self.interior_rows]
            bi = self.boundary_index
            b[4 * bi + 2] = s[bi, 0]
            b[4 * bi + 3] = s[bi, 1]
        f = np.asarray(f, dtype=complex).reshape(self.n_boundary, 2)
        b[4 * self.boundary_index] = f[:, 0]
        b[4 * self.boundary_index + 1] = f[:, 1]
        return b

    def solve_vector(self, b, tol=1e-12):
        if self._lu is not None:
            x = self._lu.solve(b)
        else:
            x, info = spla.gmres(self.matrix, b, M=self._prec, rtol=tol, restart=200, maxiter=50)
            if info != 0:
                raise SingularSystemError(f"iterative solve did not converge (info={info})")
        return x

    def solve(self, f, source=None):
        """Return ``u`` with shape ``grid.shape + (4,)``."""
        b = self.rhs(f, source)
        return self.solve_vector(b).reshape(self.grid.shape + (4,))

    def residual(self, u, f, source=None):
        b = self.rhs(f, source)
        x = np.asarray(u).reshape(-1)
        r = self.matrix @ x - b
        return float(np.linalg.norm(r) / max(np.linalg.norm(b), 1e-300))

    def apply_operator(self, u):
        """``(P(D+A) + Q) u`` with the discrete differences (no stabilization)."""
        return (self.operator @ np.asarray(u).reshape(-1)).reshape(self.grid.shape + (4,))

    def boundary_values(self, u):
        return np.asarray(u).reshape(-1, 4)[self.boundary_index]


def assemble(grid: DomainGrid, coeffs: Coefficients, stabilization=0.25, factorize=True, method="auto"):
    """Assemble (and factorize) the discrete boundary value problem."""
    _check_box(grid)
    n = grid.n
    theta = link_integrals(grid, coeffs.A)
    op = dirac_matrix(grid, coeffs, theta)
    S = sps.kron(stabilization_matrix(grid, theta), sps.identity(4, format="csr"))
    bidx = _flat(n)[grid.on_boundary]
    nn = n**3
    is_b = np.zeros(nn, dtype=bool)
    is_b[bidx] = True
    interior_rows = (4 * np.flatnonzero(~is_b)[:, None] + np.arange(4)).ravel()
    Dint = sps.diags(np.isin(np.arange(4 * nn), interior_rows).astype(float))
    r_up = np.concatenate([4 * bidx + 2, 4 * bidx + 3])
    c_up = np.concatenate([4 * bidx, 4 * bidx + 1])
    Pb = sps.csr_matrix((np.ones(r_up.size), (r_up, c_up)), shape=(4 * nn, 4 * nn))
    Eb = sps.csr_matrix((np.ones(c_up.size), (c_up, c_up)), shape=(4 * nn, 4 * nn))
    M = (Dint @ (op + 1j * stabilization * S) + Pb @ op + Eb).tocsc()
    if method == "auto":
        method = "direct" if nn <= 30**3 else "iterative"
    sysm = DiscreteDiracSystem(grid, coeffs, stabilization, theta, op, M, bidx, interior_rows, method=method)
    if factorize:
        _factorize(sysm)
    return sysm


def _factorize(sysm: DiscreteDiracSystem):
    with warnings.catch_warnings():
        warnings.simplefilter("error", sps.linalg.MatrixRankWarning)
        try:
            if sysm.method == "direct":
                sysm._lu = spla.splu(sysm.matrix, permc_spec="COLAMD")
                diagU = np.abs(sysm._lu.U.diagonal())
                if diagU.min() <= 1e-13 * diagU.max():
                    raise SingularSystemError("factorization is numerically singular")
            else:
                ilu = spla.spilu(sysm.matrix, drop_tol=1e-5, fill_factor=20)
                sysm._prec = spla.LinearOperator(sysm.matrix.shape, ilu.solve, dtype=complex)
        except (RuntimeError, sps.linalg.MatrixRankWarning) as exc:
            if isinstance(exc, SingularSystemError):
                raise
            raise SingularSystemError(str(exc)) from exc


def assemble_with_shift(grid, coeffs, stabilization=0.25, shifts=(0.0, 1e-3, 1e-2, 1e-1), method="auto"):
    """Assemble, shifting ``q+-`` by the first ``delta`` in ``shifts`` that gives a nonsingular system."""
    last = None
    for delta in shifts:
        c = coeffs if delta == 0 else coeffs.with_shift(delta)
        try:
            s = assemble(grid, c, stabilization, method=method)
            s.shift = delta
            return s
        except SingularSystemError as exc:
            last = exc
    raise SingularSystemError(f"system singular for all shifts {shifts}: {last}")


def solve_bvp(coeffs: Coefficients, f, grid: DomainGrid, source=None, stabilization=0.25, system=None):
    """Solve ``L_V u = source`` with ``u_+ = f`` on the boundary nodes."""
    sysm = system or assemble(grid, coeffs, stabilization)
    return sysm.solve(f, source)


# --------------------------------------------------------------------------
# boundary maps and Cauchy data


def dtd_map(system: DiscreteDiracSystem, basis=None):
    """Dense Dirichlet-to-Dirichlet matrix ``f -> u_-|boundary`` on the columns of ``basis``.

    ``basis`` has shape ``(2 n_boundary, m)``; default is the full nodal basis.
    """
    nb = system.n_boundary
    if basis is None:
        basis = np.eye(2 * nb, dtype=complex)
    basis = np.asarray(basis, dtype=complex)
    out = np.zeros((2 * nb, basis.shape[1]), dtype=complex)
    for j in range(basis.shape[1]):
        u = system.solve(basis[:, j].reshape(nb, 2))
        out[:, j] = system.boundary_values(u)[:, 2:].reshape(-1)
    return out


def node_patch(system: DiscreteDiracSystem, patch: BoundaryPatch | None):
    """Boundary-node mask (over ``system.boundary_index``) of nodes with any sample in ``patch``."""
    nb = system.n_boundary
    if patch is None:
        return np.zeros(nb, dtype=bool)
    grid = system.grid
    pos = np.searchsorted(system.boundary_index, grid.boundary_nodes)
    out = np.zeros(nb, dtype=bool)
    out[pos[patch.mask]] = True
    return out


@dataclass
class CauchyDataSet:
    f: list
    u_minus: list
    gamma_nodes: np.ndarray
    residuals: list

    def __len__(self):
        return len(self.f)

    def max_difference(self, other: "CauchyDataSet"):
        d = 0.0
        for a, b, c, e in zip(self.f, other.f, self.u_minus, other.u_minus):
            d = max(d, float(np.max(np.abs(a - b), initial=0.0)), float(np.max(np.abs(c - e), initial=0.0)))
        return d


def cauchy_set(system: DiscreteDiracSystem, gamma: BoundaryPatch | None, samples, tol=1e-8):
    """Pairs ``(f, u_-|Gamma)`` for each boundary data sample ``f``."""
    gnodes = node_patch(system, gamma) if not isinstance(gamma, np.ndarray) else gamma
    fs, us, res = [], [], []
    for f in samples:
        u = system.solve(f)
        r = system.residual(u, f)
        if r > tol:
            raise SingularSystemError(f"solution residual {r:.2e} exceeds {tol:.1e}")
        fs.append(np.asarray(f, dtype=complex).reshape(-1, 2))
        us.append(system.boundary_values(u)[gnodes, 2:])
        res.append(r)
    return CauchyDataSet(fs, us, gnodes, res)


# --------------------------------------------------------------------------
# gauge transformations


def gauge_transform(coeffs: Coefficients, p):
    """Return ``(coeffs with A + grad p, map u -> exp(-ip) u)``."""
    p = as_scalar(p)
    new = coeffs.gauge(p)

    def solution_map(u, points):
        return np.exp(-1j * p(points))[..., None] * u

    return new, solution_map


# --------------------------------------------------------------------------
# quadrature on the grid


def inner(grid: DomainGrid, u, v):
    """``(u|v) = int u . conj(v) dx`` with trapezoid weights."""
    u = np.asarray(u)
    v = np.asarray(v)
    prod = u * np.conj(v)
    prod = prod.reshape(grid.shape + (-1,)).sum(axis=-1) if prod.ndim > 3 else prod
    return complex(np.sum(grid.volume_weights * prod))


def matrix_inner(grid: DomainGrid, U, W):
    """``(U|W) = int W^* U dx`` for 4x4 (or 4xk) matrix fields."""
    return np.einsum("ijk,ijkab,ijkac->bc", grid.volume_weights, np.conj(W), U)


def boundary_samples(grid: DomainGrid, u):
    """Values of a node field at the box face samples (``len(boundary_points)`` rows)."""
    return np.asarray(u).reshape((grid.n**3,) + np.asarray(u).shape[3:])[grid.boundary_nodes]


def normal_derivative(grid: DomainGrid, u):
    """``d u / d nu`` at the face samples by second-order one-sided differences."""
    _check_box(grid)
    u = np.asarray(u)
    n = grid.n
    ii = np.unravel_index(grid.boundary_nodes, grid.shape)
    out = np.zeros((grid.boundary_nodes.size,) + u.shape[3:], dtype=complex)
    for f in range(6):
        k, up = divmod(f, 2)
        sel = grid.boundary_face == f
        if not sel.any():
            continue
        d = grid.spacing[k]
        idx = [a[sel] for a in ii]
        step = -1 if up else 1

        def at(m):
            j = list(idx)
            j[k] = j[k] + step * m
            return u[tuple(j)]

        inward = (-3 * at(0) + 4 * at(1) - at(2)) / (2 * d)
        out[sel] = -inward
    return out


def boundary_inner(grid: DomainGrid, a, b, mask=None, weights=None):
    """Surface pairing ``int a . conj(b) dS`` over face samples (optionally masked)."""
    w = grid.boundary_weights if weights is None else weights
    if mask is not None:
        w = w * mask
    prod = np.asarray(a) * np.conj(b)
    if prod.ndim > 1:
        prod = prod.reshape(prod.shape[0], -1).sum(axis=1)
    return complex(np.sum(w * prod))


def boundary_matrix_inner(grid: DomainGrid, U, W, mask=None):
    """``(U|W)_boundary = int W^* U dS`` for matrix-valued face samples."""
    w = grid.boundary_weights if mask is None else grid.boundary_weights * mask
    return np.einsum("m,mab,mac->bc", w, np.conj(W), U)


def free_dirac(grid: DomainGrid, u):
    """``P(D) u`` by plain (non-covariant) differences."""
    Dk = covariant_difference_matrices(grid)
    u = np.asarray(u)
    flat = u.reshape(grid.n**3, 4, -1)
    out = 0
    for k in range(3):
        du = np.stack([Dk[k] @ flat[:, :, c] for c in range(flat.shape[2])], axis=-1)
        out = out + np.einsum("ij,njc->nic", ALPHA[k], -1j * du)
    return out.reshape(u.shape)


def integration_by_parts_gap(grid: DomainGrid, w1, w2):
    """``(P(D)w1|w2) - (w1|P(D)w2) - (1/i)(P(nu)w1|w2)_boundary`` and a normalizing scale."""
    pw1 = free_dirac(grid, w1)
    pw2 = free_dirac(grid, w2)
    a = inner(grid, pw1, w2)
    b = inner(grid, w1, pw2)
    nu = grid.boundary_normals
    Pn = cl.p_dirac(nu)
    w1b = boundary_samples(grid, w1)
    w2b = boundary_samples(grid, w2)
    c = boundary_inner(grid, np.einsum("mij,mj->mi", Pn, w1b), w2b) / 1j
    scale = abs(a) + abs(b) + abs(c)
    return a - b - c, scale


# --------------------------------------------------------------------------
# second-order operator for u_+


def _cov_grad(grid, u, theta):
    """Gradient-like list ``[(d_k + i A_k) u]`` with the covariant difference matrices."""
    Dk = covariant_difference_matrices(grid, theta)
    u = np.asarray(u, dtype=complex)
    flat = u.reshape(grid.n**3, -1)
    return [(Dk[k] @ flat).reshape(u.shape) for k in range(3)]


def _sigma_pi(grid, u, theta):
    """``sigma.(D+A) u`` for a 2-spinor node field."""
    g = _cov_grad(grid, u, theta)
    return sum(np.einsum("ij,...j->...i", cl.SIGMA[k], -1j * g[k]) for k in range(3))


def second_order_apply(grid: DomainGrid, u_plus, coeffs: Coefficients, mask=None, threshold=1e-8, form="factored"):
    """Apply the decoupled second-order operator to a 2-spinor field ``u_+``.

    ``form="factored"`` gives ``sigma.(D+A)((1/q_-) sigma.(D+A) u) - q_+ u``;
    ``form="expanded"`` gives ``(-Lap + 2A.D - (1/q_-)(sigma.Dq_-) sigma.D + q_hat) u``,
    which equals ``q_-`` times the factored form. Nodes with ``|q_-| < threshold``
    are rejected unless excluded by ``mask``.
    """
    pts = grid.nodes
    qm = coeffs.q_minus(pts)
    qp = coeffs.q_plus(pts)
    sel = np.ones(grid.shape, dtype=bool) if mask is None else mask
    if np.any(np.abs(qm[sel]) < threshold):
        raise ValueError("q_- vanishes on the evaluation set; restrict it to where |q_-| is bounded below")
    u = np.asarray(u_plus, dtype=complex)
    if form == "factored":
        theta = link_integrals(grid, coeffs.A)
        inv = np.where(np.abs(qm) >= threshold, 1.0 / np.where(qm == 0, 1.0, qm), 0.0)
        w = inv[..., None] * _sigma_pi(grid, u, theta)
        out = _sigma_pi(grid, w, theta) - qp[..., None] * u
    elif form == "expanded":
        g = np.stack(_cov_grad(grid, u, None), axis=-1)  # plain d_k u
        lap = sum(_cov_grad(grid, g[..., k], None)[k] for k in range(3))
        A = coeffs.A(pts)
        Dq = -1j * coeffs.q_minus.grad(pts)
        Du = -1j * g
        sDq = cl.sigma_dot(Dq)
        inv = np.where(np.abs(qm) >= threshold, 1.0 / np.where(qm == 0, 1.0, qm), 0.0)
        sD = np.einsum("kij,...jk->...i", cl.SIGMA, Du)
        term_A = 2 * np.einsum("...k,...ik->...i", A, Du)
        qt = q_tilde(coeffs, pts)
        qhat = -inv[..., None, None] * (sDq @ cl.sigma_dot(A)) + qt
        out = -lap + term_A - inv[..., None] * np.einsum("...ij,...j->...i", sDq, sD)
        out = out + np.einsum("...ij,...j->...i", qhat, u)
    else:
        raise ValueError("form must be 'factored' or 'expanded'")
    if mask is not None:
        out = np.where(mask[..., None], out, 0.0)
    return out


def q_tilde(coeffs: Coefficients, points):
    """The 2x2 zeroth-order part ``-i div A + A.A + sigma.curl A - q_+ q_-``."""
    A = coeffs.A(points)
    val = -1j * coeffs.A.divergence(points) + np.sum(A * A, axis=-1) - coeffs.q_plus(points) * coeffs.q_minus(points)
    return val[..., None, None] * cl.I2 + cl.sigma_dot(coeffs.A.curl(points))


# --------------------------------------------------------------------------
# manufactured fields


class SpinorField:
    """Closed-form complex 4-spinor ``u = re + i im`` with exact derivatives."""

    def __init__(self, re, im=(0, 0, 0, 0)):
        self.re = [as_scalar(e) for e in re]
        self.im = [as_scalar(e) for e in im]
        if len(self.re) != 4 or len(self.im) != 4:
            raise ValueError("spinor fields have four components")

    def __call__(self, points):
        return np.stack([a(points) + 1j * b(points) for a, b in zip(self.re, self.im)], axis=-1)

    def jacobian(self, points):
        """``J[..., c, k] = d u_c / d x_k``."""
        return np.stack([a.grad(points) + 1j * b.grad(points) for a, b in zip(self.re, self.im)], axis=-2)

    def apply_dirac(self, coeffs: Coefficients, points):
        """Exact ``(P(D) + V) u`` at ``points``."""
        J = self.jacobian(points)
        pd = np.einsum("kij,...jk->...i", ALPHA, -1j * J)
        return pd + np.einsum("...ij,...j->...i", coeffs.potential(points), self(points))


# --------------------------------------------------------------------------
# estimator front end


def _data_rows(F):
    # sklearn's check_array rejects complex input
    F = np.atleast_2d(np.asarray(F, dtype=complex))
    if F.ndim != 2 or not np.all(np.isfinite(F)):
        raise ValueError("boundary data must be a finite 2D array of rows")
    return F


class DiracForwardSolver(BaseEstimator):
    """Estimator-style wrapper: ``fit`` assembles and factorizes, ``predict`` maps data to ``u_-`` traces.

    ``predict`` takes boundary data rows of length ``2 * n_boundary`` (the two
    ``u_+`` components at each boundary node, node-major) and returns the ``u_-``
    traces in the same layout.
    """

    def __init__(self, domain=None, n=17, stabilization=0.25, method="auto", shifts=(0.0, 1e-3, 1e-2, 1e-1)):
        self.domain = domain
        self.n = n
        self.stabilization = stabilization
        self.method = method
        self.shifts = shifts

    def fit(self, coeffs: Coefficients, y=None):
        spec = dict(self.domain or {"shape": "box", "center": (0.0, 0.0, 2.0), "size": 1.0})
        spec["n"] = self.n
        self.grid_ = build_domain(spec)
        self.system_ = assemble_with_shift(self.grid_, coeffs, self.stabilization, self.shifts, self.method)
        self.shift_ = self.system_.shift
        self.n_boundary_ = self.system_.n_boundary
        return self

    def solve(self, f, source=None):
        check_is_fitted(self, "system_")
        return self.system_.solve(f, source)

    def predict(self, F):
        check_is_fitted(self, "system_")
        F = _data_rows(F)
        if F.shape[1] != 2 * self.n_boundary_:
            raise ValueError(f"expected rows of length {2 * self.n_boundary_}, got {F.shape[1]}")
        out = np.empty_like(F)
        for i, row in enumerate(F):
            u = self.system_.solve(row.reshape(-1, 2))
            out[i] = self.system_.boundary_values(u)[:, 2:].reshape(-1)
        return out

    def transform(self, F):
        """Full solutions for each data row, shape ``(rows,) + grid.shape + (4,)``."""
        check_is_fitted(self, "system_")
        F = _data_rows(F)
        return np.stack([self.system_.solve(r.reshape(-1, 2)) for r in F])


# --------------------------------------------------------------------------
# decoupled second-order solver (q_- nonvanishing on the closed domain)


def covariant_laplacian_matrix(grid: DomainGrid, theta):
    """Compact ``sum_k (T_k - 2 + T_{-k}) / spacing_k^2`` on interior nodes (zero boundary rows)."""
    n = grid.n
    idx = _flat(n)
    inner_ = idx[1:-1, 1:-1, 1:-1].ravel()
    diag = -2 * sum(1 / d**2 for d in grid.spacing)
    rows, cols, vals = [inner_], [inner_], [np.full(inner_.size, diag + 0j)]
    for k in range(3):
        d2 = grid.spacing[k] ** 2
        L = np.exp(1j * theta[k])
        sp_ = [slice(1, -1)] * 3
        sm = [slice(1, -1)] * 3
        sp_[k] = slice(2, n)
        sm[k] = slice(0, n - 2)
        rows += [inner_, inner_]
        cols += [idx[tuple(sp_)].ravel(), idx[tuple(sm)].ravel()]
        vals += [L[tuple([slice(1, -1)] * 3)].ravel() / d2, np.conj(L[tuple(sm)]).ravel() / d2]
    return sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n**3, n**3))


@dataclass
class DecoupledSystem:
    """Dirichlet problem for ``sigma.(D+A)((1/q_-) sigma.(D+A) u_+) - q_+ u_+ = 0``.

    Interior rows carry ``q_-`` times the operator in expanded form with a
    compact covariant Laplacian; ``u_-`` is recovered as ``-(1/q_-) sigma.(D+A) u_+``.
    """

    grid: DomainGrid
    coeffs: Coefficients
    theta: np.ndarray
    matrix: sps.csc_matrix
    sigma_pi: sps.csr_matrix  # 2n^3 x 2n^3, sigma.(D+A) with one-sided ends
    boundary_index: np.ndarray
    q_minus: np.ndarray
    s_dq: np.ndarray  # (1/q_-) sigma.Dq_- per node
    row_scale: float = 1.0
    tol: float = 1e-11
    _lu: object = field(default=None, repr=False)
    _prec: object = field(default=None, repr=False)

    @property
    def n_boundary(self):
        return self.boundary_index.size

    def _source_rows(self, source):
        """Interior right-hand side ``sigma.Pi G_- - (sigma.Dq_-/q_-) G_- - q_- G_+`` for ``L_V u = G``."""
        s = np.asarray(source, dtype=complex).reshape(-1, 4)
        qm = self.q_minus.reshape(-1)
        gm = s[:, 2:]
        r = (self.sigma_pi @ gm.reshape(-1)).reshape(-1, 2)
        r = r - np.einsum("mij,mj->mi", self.s_dq, gm) - qm[:, None] * s[:, :2]
        return r.reshape(-1)

    def solve_plus(self, f, source=None):
        n3 = self.grid.n**3
        b = np.zeros(2 * n3, dtype=complex) if source is None else self.row_scale * self._source_rows(source)
        f = np.asarray(f, dtype=complex).reshape(self.n_boundary, 2)
        b[2 * self.boundary_index] = f[:, 0]
        b[2 * self.boundary_index + 1] = f[:, 1]
        if self._lu is not None:
            x = self._lu.solve(b)
        else:
            x, info = spla.gmres(self.matrix, b, M=self._prec, rtol=self.tol, atol=0.0, restart=100, maxiter=40)
            if info != 0:
                raise SingularSystemError(f"iterative solve did not converge (info={info})")
        return x

    def solve(self, f, source=None):
        """Full 4-spinor ``u`` with shape ``grid.shape + (4,)``; ``source`` is ``G`` in ``L_V u = G``."""
        up = self.solve_plus(f, source)
        um = -(self.sigma_pi @ up).reshape(-1, 2)
        if source is not None:
            um = um + np.asarray(source, dtype=complex).reshape(-1, 4)[:, 2:]
        um = um / self.q_minus.reshape(-1)[:, None]
        u = np.concatenate([up.reshape(-1, 2), um], axis=1)
        return u.reshape(self.grid.shape + (4,))

    def boundary_values(self, u):
        return np.asarray(u).reshape(-1, 4)[self.boundary_index]


def assemble_decoupled(grid: DomainGrid, coeffs: Coefficients, method="auto", threshold=1e-3):
    """Assemble the decoupled system; needs ``|q_-| >= threshold`` at every node."""
    _check_box(grid)
    n = grid.n
    n3 = n**3
    pts = grid.nodes.reshape(-1, 3)
    qm = coeffs.q_minus(pts)
    if np.min(np.abs(qm)) < threshold:
        raise ValueError("the decoupled solver needs q_- bounded away from zero on the domain")
    theta = link_integrals(grid, coeffs.A)
    Dk = covariant_difference_matrices(grid, theta)
    sig = [sps.csr_matrix(cl.SIGMA[k]) for k in range(3)]
    sigma_pi = sum(sps.kron(-1j * Dk[k], sig[k]) for k in range(3)).tocsr()
    lap = sps.kron(covariant_laplacian_matrix(grid, theta), sps.identity(2))
    smp = coeffs.sample(pts)
    sB = cl.sigma_dot(smp.curl_A)
    sDq = cl.sigma_dot(-1j * smp.grad_q_minus) / qm[:, None, None]
    blk = lambda a: sps.block_diag(list(a), format="csr")
    Mi = -lap + blk(sB - (smp.q_plus * qm)[:, None, None] * cl.I2) - blk(sDq) @ sigma_pi
    bidx = _flat(n)[grid.on_boundary]
    is_b = np.zeros(n3, dtype=bool)
    is_b[bidx] = True
    keep = np.repeat(~is_b, 2).astype(float)
    row_scale = float(np.min(grid.spacing)) ** 2  # interior rows O(1) next to the identity boundary rows
    M = (sps.diags(row_scale * keep) @ Mi + sps.diags(1.0 - keep)).tocsc()
    sysm = DecoupledSystem(grid, coeffs, theta, M, sigma_pi, bidx, qm, sDq, row_scale)
    if method == "auto":
        method = "direct" if n3 <= 21**3 else "iterative"
    if method == "direct":
        sysm._lu = spla.splu(M, permc_spec="COLAMD")
    else:
        sysm._prec = _laplace_amg_preconditioner(grid, is_b, theta)
    return sysm


def _laplace_amg_preconditioner(grid: DomainGrid, is_boundary, theta):
    """Multigrid V-cycle for the covariant Dirichlet Laplacian, applied per spinor component."""
    import pyamg

    n3 = grid.n**3
    L = covariant_laplacian_matrix(grid, theta)
    keep = (~is_boundary).astype(float)
    L = (-sps.diags(keep * float(np.min(grid.spacing)) ** 2) @ L + sps.diags(1.0 - keep)).tocsr()
    ml = pyamg.smoothed_aggregation_solver(L, symmetry="nonsymmetric")

    def apply(b):
        b = np.asarray(b).reshape(n3, 2)
        out = np.empty_like(b, dtype=complex)
        for c in range(2):
            out[:, c] = ml.solve(b[:, c], maxiter=1, tol=1e-30)
        return out.reshape(-1)

    return spla.LinearOperator((2 * n3, 2 * n3), apply, dtype=complex)

