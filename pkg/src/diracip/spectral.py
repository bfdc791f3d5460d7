"""Chebyshev tensor grids in the cylindrical coordinates of the phase.

Points are parametrized by ``(x1, r, theta)`` in the normalized frame of a
:class:`~diracip.geometry.LogPhase`, so that the slices ``theta = const`` are
exactly the planes spanned by ``Re zeta`` and ``Im zeta``. Derivatives are
spectral, which keeps discretization error far below the ``h**3`` residuals
the CGO construction has to resolve.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .geometry import DomainGrid, LogPhase


def cheb_nodes(n, a=-1.0, b=1.0):
    """``n`` Chebyshev-Lobatto points on ``[a, b]`` in increasing order."""
    t = -np.cos(np.pi * np.arange(n) / (n - 1))
    return a + (b - a) * (t + 1) / 2


def _bary_weights(n):
    w = (-1.0) ** np.arange(n)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def cheb_diff(n, a=-1.0, b=1.0):
    """First-derivative collocation matrix on :func:`cheb_nodes`."""
    x = cheb_nodes(n, -1.0, 1.0)
    w = _bary_weights(n)
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    D = (w[None, :] / w[:, None]) / dx
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D * (2.0 / (b - a))


def clenshaw_curtis(n, a=-1.0, b=1.0):
    """Clenshaw-Curtis weights matching :func:`cheb_nodes`."""
    N = n - 1
    theta = np.pi * np.arange(n) / N
    w = np.zeros(n)
    v = np.ones(N - 1)
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N**2 - 1)
        for k in range(1, N // 2):
            v -= 2 * np.cos(2 * k * theta[1:-1]) / (4 * k**2 - 1)
        v -= np.cos(N * theta[1:-1]) / (N**2 - 1)
    else:
        w[0] = w[N] = 1.0 / N**2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2 * np.cos(2 * k * theta[1:-1]) / (4 * k**2 - 1)
    w[1:-1] = 2 * v / N
    return w * (b - a) / 2


def bary_matrix(nodes_n, x, a, b):
    """Rows interpolating from Chebyshev data on ``[a, b]`` to points ``x``."""
    xs = cheb_nodes(nodes_n, a, b)
    w = _bary_weights(nodes_n)
    x = np.asarray(x, dtype=float)
    d = x[:, None] - xs[None, :]
    exact = np.isclose(d, 0.0, atol=1e-14 * (b - a))
    d = np.where(exact, 1.0, d)
    M = w[None, :] / d
    M /= M.sum(axis=1, keepdims=True)
    hit = exact.any(axis=1)
    if hit.any():
        M[hit] = exact[hit].astype(float)
    return M


def _apply_axis(M, F, axis):
    return np.moveaxis(np.tensordot(M, F, axes=([1], [axis])), 0, axis)


class CylinderGrid:
    """Tensor Chebyshev grid over ``[x1] x [r] x [theta]`` in a phase frame.

    Fields are arrays whose first three axes index the grid; any trailing
    axes are components.
    """

    def __init__(self, logphase: LogPhase, bounds, n=(17, 17, 17), domain: DomainGrid | None = None):
        self.logphase = logphase
        self.bounds = tuple(tuple(map(float, b)) for b in bounds)
        self.n = tuple(int(k) for k in np.broadcast_to(n, (3,)))
        if self.bounds[1][0] <= 0:
            raise ValueError("cylinder grid must stay away from the axis r = 0")
        self.axes = tuple(cheb_nodes(k, *b) for k, b in zip(self.n, self.bounds))
        self.D = tuple(cheb_diff(k, *b) for k, b in zip(self.n, self.bounds))
        self.D2 = tuple(d @ d for d in self.D)
        self.domain = domain

    @classmethod
    def covering(cls, logphase: LogPhase, domain: DomainGrid, n=(17, 17, 17), pad=0.0):
        """Smallest cylindrical box containing ``domain`` (plus relative ``pad``)."""
        if domain.kind == "box":
            half = domain.size / 2
            s = np.linspace(-1, 1, 41)
            g = np.stack(np.meshgrid(s, s, s, indexing="ij"), axis=-1).reshape(-1, 3)
            g = g[np.any(np.abs(g) == 1, axis=1)]
            pts = domain.center + g * half
        else:
            pts = domain.boundary_points
        sc = logphase.special(pts)
        lims = []
        for v in (sc.x1, sc.r, sc.theta):
            lo, hi = float(v.min()), float(v.max())
            span = hi - lo
            lims.append((lo - pad * span, hi + pad * span))
        return cls(logphase, lims, n=n, domain=domain)

    @property
    def shape(self):
        return self.n

    @cached_property
    def local_coords(self):
        return np.meshgrid(*self.axes, indexing="ij")

    @cached_property
    def points(self):
        x1, r, th = self.local_coords
        loc = np.stack([x1, r * np.cos(th), r * np.sin(th)], axis=-1)
        return self.logphase.frame.world(loc)

    @cached_property
    def coords(self):
        return self.logphase.special(self.points)

    @cached_property
    def r(self):
        return self.local_coords[1]

    @cached_property
    def theta(self):
        return self.local_coords[2]

    @cached_property
    def z(self):
        return self.coords.z

    @cached_property
    def mask(self):
        if self.domain is None:
            return np.ones(self.shape, dtype=bool)
        return self.domain.contains(self.points)

    @cached_property
    def weights(self):
        """Volume quadrature weights restricted to the domain mask."""
        w = [clenshaw_curtis(k, *b) for k, b in zip(self.n, self.bounds)]
        full = np.einsum("i,j,k->ijk", *w) * self.r
        return full * self.mask

    @cached_property
    def full_weights(self):
        w = [clenshaw_curtis(k, *b) for k, b in zip(self.n, self.bounds)]
        return np.einsum("i,j,k->ijk", *w) * self.r

    # derivatives ---------------------------------------------------------

    def d(self, F, axis, order=1):
        M = self.D[axis] if order == 1 else self.D2[axis]
        return _apply_axis(M, F, axis)

    def _bcast(self, a, F):
        return a.reshape(a.shape + (1,) * (F.ndim - 3))

    def grad(self, F):
        """World-component gradient, shape ``F.shape + (3,)``."""
        F = np.asarray(F)
        d1 = self.d(F, 0)
        dr = self.d(F, 1)
        dt = self.d(F, 2) / self._bcast(self.r, F)
        sc = self.coords
        e1 = np.broadcast_to(self.logphase.omega, sc.e_r.shape)
        ex = e1.reshape(self.shape + (1,) * (F.ndim - 3) + (3,))
        er = sc.e_r.reshape(ex.shape)
        et = sc.e_theta.reshape(ex.shape)
        out = d1[..., None] * ex + dr[..., None] * er + dt[..., None] * et
        return out

    def laplacian(self, F):
        F = np.asarray(F)
        r = self._bcast(self.r, F)
        return self.d(F, 0, 2) + self.d(F, 1, 2) + self.d(F, 1) / r + self.d(F, 2, 2) / r**2

    def d_theta(self, F):
        return self.d(F, 2)

    # slice Cauchy-Riemann solves ------------------------------------------

    def _dbar_operator(self, sign):
        n1, nr = self.n[0], self.n[1]
        return np.kron(self.D[0], np.eye(nr)) + sign * 1j * np.kron(np.eye(n1), self.D[1])

    @cached_property
    def _dbar_pinv(self):
        return {s: np.linalg.pinv(self._dbar_operator(s), rcond=1e-13) for s in (1, -1)}

    def dbar_apply(self, B, sign=1):
        """``(d/dx1 + sign i d/dr) B``; on slices this is ``zeta . grad`` (sign=+1)."""
        return self.d(B, 0) + sign * 1j * self.d(B, 1)

    def dbar_solve(self, F, sign=1):
        """Minimum-norm collocation solution of ``(d/dx1 + sign i d/dr) B = F``, slice by slice."""
        F = np.asarray(F, dtype=complex)
        n1, nr = self.n[0], self.n[1]
        flat = F.reshape(n1 * nr, -1)
        return (self._dbar_pinv[sign] @ flat).reshape(F.shape)

    # integration and interpolation -----------------------------------------

    def integrate(self, F, masked=True):
        w = self.weights if masked else self.full_weights
        return np.tensordot(w, F, axes=([0, 1, 2], [0, 1, 2]))

    def l2_norm(self, F, masked=True):
        F = np.asarray(F)
        sq = np.abs(F) ** 2
        if F.ndim > 3:
            sq = sq.reshape(self.shape + (-1,)).sum(axis=-1)
        return float(np.sqrt(self.integrate(sq, masked=masked)))

    def local_of(self, points):
        sc = self.logphase.special(points)
        return sc.x1, sc.r, sc.theta

    def interpolate(self, F, points, chunk=400):
        """Barycentric evaluation of grid data ``F`` at world ``points``."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        x1, r, th = self.local_of(pts)
        out = []
        F = np.asarray(F)
        for s in range(0, pts.shape[0], chunk):
            sl = slice(s, s + chunk)
            L = [bary_matrix(k, c[sl], *b) for k, c, b in zip(self.n, (x1, r, th), self.bounds)]
            G = np.tensordot(L[0], F, axes=([1], [0]))  # m, nr, nt, ...
            G = np.einsum("mj,mj...->m...", L[1], G)
            G = np.einsum("mk,mk...->m...", L[2], G)
            out.append(G)
        res = np.concatenate(out, axis=0)
        return res.reshape(np.asarray(points).shape[:-1] + F.shape[3:])
