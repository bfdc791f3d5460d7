"""Domains, the logarithmic phase and its convexified weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_MARGIN = 1e-6


class DomainError(ValueError):
    pass


# --------------------------------------------------------------------------
# coordinate frame: pole at the origin, direction along e1, domain in y3 > 0


@dataclass(frozen=True)
class Frame:
    """Rigid change of coordinates ``y = R (x - x0)``.

    Rows of ``R`` are the local axes expressed in world coordinates; the
    first row is the direction ``omega``.
    """

    x0: np.ndarray
    R: np.ndarray

    @classmethod
    def build(cls, x0, omega, reference_point=None):
        x0 = np.asarray(x0, dtype=float)
        w = np.asarray(omega, dtype=float)
        nw = np.linalg.norm(w)
        if nw == 0:
            raise DomainError("omega must be nonzero")
        w = w / nw
        if reference_point is None:
            e3 = np.array([0.0, 0.0, 1.0])
        else:
            e3 = np.asarray(reference_point, dtype=float) - x0
        e3 = e3 - np.dot(e3, w) * w
        if np.linalg.norm(e3) < 1e-12:
            raise DomainError("reference point lies on the ray through x0 along omega")
        e3 /= np.linalg.norm(e3)
        e2 = np.cross(e3, w)
        return cls(x0=x0, R=np.stack([w, e2, e3]))

    def local(self, points):
        return (np.asarray(points, dtype=float) - self.x0) @ self.R.T

    def world(self, local_points):
        return np.asarray(local_points) @ self.R + self.x0

    def vec_world(self, local_vectors):
        """Map (possibly complex) vectors from local to world components."""
        return np.asarray(local_vectors) @ self.R

    def vec_local(self, world_vectors):
        return np.asarray(world_vectors) @ self.R.T


# --------------------------------------------------------------------------
# discretized domain


@dataclass
class DomainGrid:
    """Uniform node grid over a ball or a box with boundary quadrature.

    ``boundary_points`` are surface quadrature nodes with outward unit
    ``boundary_normals`` and area ``boundary_weights``. For boxes they are the
    grid nodes on each face (edge and corner nodes appear once per face, with
    that face's normal) and ``boundary_nodes`` gives their flat node index.
    For balls they are latitude-longitude nodes on the exact sphere and
    ``boundary_nodes`` is -1.
    """

    kind: str
    center: np.ndarray
    size: np.ndarray  # box: side lengths; ball: (radius, radius, radius)
    n: int
    axes: tuple
    spacing: np.ndarray
    inside: np.ndarray
    volume_weights: np.ndarray
    boundary_points: np.ndarray
    boundary_normals: np.ndarray
    boundary_weights: np.ndarray
    boundary_nodes: np.ndarray
    boundary_face: np.ndarray
    on_boundary: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    @property
    def nodes(self):
        g = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(g, axis=-1)

    @property
    def lower(self):
        return np.array([a[0] for a in self.axes])

    @property
    def upper(self):
        return np.array([a[-1] for a in self.axes])

    @property
    def volume(self):
        return float(self.volume_weights.sum())

    @property
    def surface_area(self):
        return float(self.boundary_weights.sum())

    def contains(self, points, tol=0.0):
        p = np.asarray(points, dtype=float)
        if self.kind == "ball":
            return np.linalg.norm(p - self.center, axis=-1) <= self.size[0] + tol
        half = self.size / 2
        return np.all(np.abs(p - self.center) <= half + tol, axis=-1)

    def hull_contains(self, x0):
        """Convex hull test; both supported shapes are convex."""
        return bool(self.contains(np.asarray(x0, dtype=float)[None, :], tol=1e-12)[0])

    def hull_extent(self):
        """Corner points (box) or a dense sphere sampling (ball) of the hull."""
        if self.kind == "box":
            half = self.size / 2
            signs = np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1], indexing="ij")).reshape(3, -1).T
            return self.center + signs * half
        return self.boundary_points


def _trapezoid_weights(n, d):
    w = np.full(n, d)
    w[0] = w[-1] = d / 2
    return w


def build_domain(spec) -> DomainGrid:
    """Build a grid from ``{"shape": "ball"|"box", "center", "radius"|"size", "n"}``.

    The domain must lie strictly inside the half-space ``x3 > 0``.
    """
    shape = spec.get("shape", "box")
    center = np.asarray(spec.get("center", (0.0, 0.0, 2.0)), dtype=float)
    n = int(spec.get("n", 17))
    if n < 5:
        raise DomainError("grid resolution must be at least 5 nodes per axis")
    if shape == "ball":
        radius = float(spec.get("radius", 1.0))
        if radius <= 0:
            raise DomainError("radius must be positive")
        if center[2] - radius <= DEFAULT_MARGIN:
            raise DomainError("ball must lie strictly inside x3 > 0")
        return _build_ball(center, radius, n, int(spec.get("surface_nodes", 0)) or 2 * n)
    if shape == "box":
        size = np.broadcast_to(np.asarray(spec.get("size", 1.0), dtype=float), (3,)).copy()
        if np.any(size <= 0):
            raise DomainError("box sides must be positive")
        if center[2] - size[2] / 2 <= DEFAULT_MARGIN:
            raise DomainError("box must lie strictly inside x3 > 0")
        return _build_box(center, size, n)
    raise DomainError(f"unknown domain shape {shape!r}")


def _build_box(center, size, n):
    lo = center - size / 2
    axes = tuple(np.linspace(lo[k], lo[k] + size[k], n) for k in range(3))
    spacing = size / (n - 1)
    w1 = [_trapezoid_weights(n, spacing[k]) for k in range(3)]
    vol = np.einsum("i,j,k->ijk", *w1)
    inside = np.ones((n, n, n), dtype=bool)
    idx = np.arange(n**3).reshape(n, n, n)
    pts, nrm, wts, nodes, faces = [], [], [], [], []
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    for k in range(3):
        others = [j for j in range(3) if j != k]
        wf = np.outer(w1[others[0]], w1[others[1]])
        for side, sl in ((-1, 0), (1, n - 1)):
            sel = [slice(None)] * 3
            sel[k] = sl
            sel = tuple(sel)
            p = grid[sel].reshape(-1, 3)
            normal = np.zeros(3)
            normal[k] = side
            pts.append(p)
            nrm.append(np.broadcast_to(normal, p.shape))
            wts.append(wf.reshape(-1))
            nodes.append(idx[sel].reshape(-1))
            faces.append(np.full(p.shape[0], 2 * k + (side > 0)))
    on_boundary = np.zeros((n, n, n), dtype=bool)
    on_boundary[[0, -1], :, :] = True
    on_boundary[:, [0, -1], :] = True
    on_boundary[:, :, [0, -1]] = True
    return DomainGrid(
        kind="box",
        center=center,
        size=size,
        n=n,
        axes=axes,
        spacing=spacing,
        inside=inside,
        volume_weights=vol,
        boundary_points=np.concatenate(pts),
        boundary_normals=np.concatenate(nrm).copy(),
        boundary_weights=np.concatenate(wts),
        boundary_nodes=np.concatenate(nodes),
        boundary_face=np.concatenate(faces),
        on_boundary=on_boundary,
    )


def _build_ball(center, radius, n, n_lat):
    lo = center - radius
    axes = tuple(np.linspace(lo[k], lo[k] + 2 * radius, n) for k in range(3))
    d = 2 * radius / (n - 1)
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    inside = np.linalg.norm(grid - center, axis=-1) <= radius
    vol = np.where(inside, d**3, 0.0)
    # latitude-longitude quadrature: Gauss-Legendre in cos(polar), uniform in azimuth
    t, wt = np.polynomial.legendre.leggauss(n_lat)
    n_lon = 2 * n_lat
    lon = 2 * np.pi * (np.arange(n_lon) + 0.5) / n_lon
    ct, ph = np.meshgrid(t, lon, indexing="ij")
    st = np.sqrt(1 - ct**2)
    normals = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1).reshape(-1, 3)
    weights = (np.outer(wt, np.full(n_lon, 2 * np.pi / n_lon)) * radius**2).reshape(-1)
    pad = np.pad(inside, 1)
    nb = np.zeros_like(inside)
    for k in range(3):
        for s in (-1, 1):
            nb |= ~np.roll(pad, s, axis=k)[1:-1, 1:-1, 1:-1]
    m = normals.shape[0]
    return DomainGrid(
        kind="ball",
        center=center,
        size=np.full(3, radius),
        n=n,
        axes=axes,
        spacing=np.full(3, d),
        inside=inside,
        volume_weights=vol,
        boundary_points=center + radius * normals,
        boundary_normals=normals,
        boundary_weights=weights,
        boundary_nodes=np.full(m, -1),
        boundary_face=np.full(m, -1),
        on_boundary=inside & nb,
    )


# --------------------------------------------------------------------------
# front face and boundary splitting


@dataclass
class BoundaryPatch:
    """A subset of the boundary quadrature nodes of a grid."""

    grid: DomainGrid
    mask: np.ndarray

    @property
    def complement(self):
        return BoundaryPatch(self.grid, ~self.mask)

    @property
    def area(self):
        return float(self.grid.boundary_weights[self.mask].sum())

    def __len__(self):
        return int(self.mask.sum())


def _check_pole(grid, x0):
    if grid.hull_contains(x0):
        raise DomainError("x0 lies in the convex hull of the domain")


def front_face(grid: DomainGrid, x0, margin=0.0) -> BoundaryPatch:
    """Boundary nodes with ``(x - x0) . nu <= margin``.

    A positive ``margin`` returns a neighbourhood of the front face, which is
    what the partial-data set Gamma must be.
    """
    x0 = np.asarray(x0, dtype=float)
    _check_pole(grid, x0)
    s = np.einsum("ij,ij->i", grid.boundary_points - x0, grid.boundary_normals)
    return BoundaryPatch(grid, s <= margin)


@dataclass
class BoundarySplit:
    plus: np.ndarray
    minus: np.ndarray
    weights_plus: np.ndarray
    weights_minus: np.ndarray
    dphi_dnu: np.ndarray


def boundary_split(grid: DomainGrid, phase, tol=1e-12) -> BoundarySplit:
    """Split boundary nodes by the sign of ``grad(phi) . nu``.

    Nodes where the sign is zero (to ``tol`` relative) belong to both parts,
    each with half their surface weight.
    """
    g = phase.logphase.grad_phi(grid.boundary_points)
    s = np.einsum("ij,ij->i", g, grid.boundary_normals)
    scale = np.linalg.norm(g, axis=-1)
    tie = np.abs(s) <= tol * scale
    plus = (s > 0) | tie
    minus = (s < 0) | tie
    w = grid.boundary_weights
    wp = np.where(plus, w, 0.0)
    wm = np.where(minus, w, 0.0)
    wp = np.where(tie, w / 2, wp)
    wm = np.where(tie, w / 2, wm)
    return BoundarySplit(plus=plus, minus=minus, weights_plus=wp, weights_minus=wm, dphi_dnu=s)


# --------------------------------------------------------------------------
# logarithmic phase


@dataclass
class SpecialCoords:
    x1: np.ndarray
    r: np.ndarray
    theta: np.ndarray
    z: np.ndarray
    e_r: np.ndarray  # world components
    e_theta: np.ndarray
    zeta: np.ndarray


class LogPhase:
    """``rho = log|x - x0| + i dist_S2((x - x0)/|x - x0|, omega)``.

    In the frame with the pole at the origin and ``omega = e1`` this is
    ``rho = log z`` with ``z = x1 + i r``.
    """

    def __init__(self, x0=(0.0, 0.0, 0.0), omega=(1.0, 0.0, 0.0), reference_point=None):
        self.frame = Frame.build(x0, omega, reference_point)

    @property
    def x0(self):
        return self.frame.x0

    @property
    def omega(self):
        return self.frame.R[0]

    def special(self, points) -> SpecialCoords:
        y = self.frame.local(points)
        r = np.hypot(y[..., 1], y[..., 2])
        th = np.arctan2(y[..., 2], y[..., 1])
        zero = np.zeros_like(r)
        one = np.ones_like(r)
        er = np.stack([zero, np.cos(th), np.sin(th)], axis=-1)
        et = np.stack([zero, -np.sin(th), np.cos(th)], axis=-1)
        e1 = np.stack([one, zero, zero], axis=-1)
        return SpecialCoords(
            x1=y[..., 0],
            r=r,
            theta=th,
            z=y[..., 0] + 1j * r,
            e_r=self.frame.vec_world(er),
            e_theta=self.frame.vec_world(et),
            zeta=self.frame.vec_world(e1 + 1j * er),
        )

    def phi(self, points):
        return np.log(np.linalg.norm(np.asarray(points) - self.x0, axis=-1))

    def psi(self, points):
        d = np.asarray(points, dtype=float) - self.x0
        c = d @ self.omega / np.linalg.norm(d, axis=-1)
        return np.arccos(np.clip(c, -1.0, 1.0))

    def rho(self, points):
        return self.phi(points) + 1j * self.psi(points)

    def grad_phi(self, points):
        d = np.asarray(points, dtype=float) - self.x0
        return d / np.sum(d * d, axis=-1, keepdims=True)

    def grad_rho(self, points):
        """Closed form ``zeta / z``."""
        s = self.special(points)
        return s.zeta / s.z[..., None]

    def lap_rho(self, points):
        """Closed form ``-2 / (z (z - conj z))``."""
        z = self.special(points).z
        return -2.0 / (z * (z - np.conj(z)))


@dataclass
class PhaseSystem:
    """Phase data evaluated on the inside nodes of a grid."""

    logphase: LogPhase
    grid: DomainGrid
    points: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    rho: np.ndarray
    grad_rho: np.ndarray
    lap_rho: np.ndarray
    coords: SpecialCoords

    @property
    def x0(self):
        return self.logphase.x0

    @property
    def omega(self):
        return self.logphase.omega


def build_phase(grid: DomainGrid, x0=(0.0, 0.0, 0.0), omega=(1.0, 0.0, 0.0), margin=1e-3) -> PhaseSystem:
    """Evaluate the logarithmic phase on the inside nodes of ``grid``.

    Rejects poles in the convex hull, and directions for which the image of
    the domain on the sphere comes within ``margin`` of ``omega`` or of its
    antipode (where the spherical distance stops being smooth).
    """
    x0 = np.asarray(x0, dtype=float)
    _check_pole(grid, x0)
    lp = LogPhase(x0, omega, reference_point=grid.center)
    probe = np.concatenate([grid.nodes[grid.inside], grid.boundary_points, grid.hull_extent()])
    ang = lp.psi(probe)
    if ang.max() >= np.pi - margin or ang.min() <= margin:
        raise DomainError("direction omega: cut locus of the spherical distance meets the domain")
    if np.any(lp.frame.local(probe)[:, 2] <= 0):
        raise DomainError("domain does not lie in y3 > 0 of the normalized frame")
    pts = grid.nodes[grid.inside]
    return PhaseSystem(
        logphase=lp,
        grid=grid,
        points=pts,
        phi=lp.phi(pts),
        psi=lp.psi(pts),
        rho=lp.rho(pts),
        grad_rho=lp.grad_rho(pts),
        lap_rho=lp.lap_rho(pts),
        coords=lp.special(pts),
    )


def eikonal_residual(grid: DomainGrid, logphase: LogPhase):
    """Max of ``|(grad rho) . (grad rho)|`` with ``grad rho`` from centred differences of the nodal ``rho``.

    Evaluated at inside nodes whose six neighbours are inside; the closed
    form gradient gives zero, so this measures the ``O(spacing^2)`` truncation.
    """
    rho = logphase.rho(grid.nodes)
    ok = grid.inside.copy()
    for k in range(3):
        ok &= np.roll(grid.inside, 1, axis=k) & np.roll(grid.inside, -1, axis=k)
        edge = [slice(None)] * 3
        edge[k] = [0, -1]
        ok[tuple(edge)] = False
    g = [(np.roll(rho, -1, axis=k) - np.roll(rho, 1, axis=k)) / (2 * grid.spacing[k]) for k in range(3)]
    res = g[0] ** 2 + g[1] ** 2 + g[2] ** 2
    return float(np.max(np.abs(res[ok])))


# --------------------------------------------------------------------------
# convexified weights


class AdmissibilityError(ValueError):
    pass


@dataclass
class ConvexWeight:
    """Convexified weight ``phi + (h/eps) phi^2/2`` with ``eps = 1/(C0 |log h^alpha|)``."""

    logphase: LogPhase
    h: float
    alpha: float
    C0: float
    epsilon: float
    sup_phi: float
    sup_phi2: float

    @property
    def convexity(self):
        """``h / eps(h)``."""
        return self.h / self.epsilon

    @property
    def weight_constant(self):
        """``C`` in ``exp(phi_tilde/h) <= h^(-C alpha) exp(phi/h)``; independent of alpha."""
        return self.C0 * self.sup_phi2 / 2

    def phi_tilde(self, points):
        phi = self.logphase.phi(points)
        return phi + self.convexity * phi**2 / 2

    def phi_hat_minus(self, points):
        """The weight for ``-phi``: ``-phi + (h/eps) phi^2/2``."""
        phi = self.logphase.phi(points)
        return -phi + self.convexity * phi**2 / 2

    def log_weight(self, points, sign=1):
        """Natural log of ``exp(phi_tilde/h)`` (sign=+1) or ``exp(-phi_hat/h)`` (sign=-1)."""
        return (self.phi_tilde(points) if sign > 0 else self.phi_hat_minus(points)) / self.h

    def excess(self, points):
        """``(phi_tilde - phi)/h``, equal to ``phi^2/(2 eps)``."""
        phi = self.logphase.phi(points)
        return phi**2 / (2 * self.epsilon)

    def bound_holds(self, points):
        lhs = self.excess(points)
        rhs = self.weight_constant * self.alpha * abs(np.log(self.h))
        return bool(np.all(lhs <= rhs * (1 + 1e-12) + 1e-300))


def epsilon_of(h, alpha, C0):
    return 1.0 / (C0 * abs(alpha * np.log(h)))


def convexify(phase, h, alpha, C0=1.0, require_log_bound=True, points=None) -> ConvexWeight:
    """Build the convexified weight for ``phase`` at semiclassical parameter ``h``.

    ``require_log_bound`` enforces ``|log h^alpha| >= 1``. The admissibility
    bound ``(h/eps) max(sup|phi|, 1) <= 1/2`` is always enforced.
    """
    if not (0 < h < 1):
        raise AdmissibilityError("h must lie in (0, 1)")
    if not (0 < alpha < 1):
        raise AdmissibilityError("alpha must lie in (0, 1)")
    if C0 <= 0:
        raise AdmissibilityError("C0 must be positive")
    L = abs(alpha * np.log(h))
    if require_log_bound and L < 1:
        raise AdmissibilityError(f"|log h^alpha| = {L:.3g} < 1")
    lp = phase.logphase if isinstance(phase, PhaseSystem) else phase
    if points is None:
        if not isinstance(phase, PhaseSystem):
            raise ValueError("points required when phase is a LogPhase")
        points = np.concatenate([phase.points, phase.grid.boundary_points])
    phi = lp.phi(points)
    eps = 1.0 / (C0 * L)
    sup = float(np.max(np.abs(phi)))
    if (h / eps) * max(sup, 1.0) > 0.5:
        raise AdmissibilityError("h too large: (h/eps) max(sup|phi|,1) exceeds 1/2")
    return ConvexWeight(
        logphase=lp, h=h, alpha=alpha, C0=C0, epsilon=eps, sup_phi=sup, sup_phi2=float(np.max(phi**2))
    )


def admissible_h_max(sup_phi, alpha, C0, require_log_bound=False):
    """Largest h on a fine log grid passing the admissibility checks."""
    hs = np.logspace(-12, -1e-6, 4000)
    L = np.abs(alpha * np.log(hs))
    ok = hs * C0 * L * max(sup_phi, 1.0) <= 0.5
    if require_log_bound:
        ok &= L >= 1
    return float(hs[ok].max()) if ok.any() else 0.0
