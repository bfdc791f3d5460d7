"""The Cauchy transform ``(zeta . grad)^{-1}`` on planar slices and transport solvers.

On the slice through the pole spanned by ``e1`` and ``e_r(theta)`` with
coordinates ``(y1, y2)``, ``zeta . grad = d/dy1 + i d/dy2``. Its inverse on
compactly supported data is convolution with ``1/(2 pi (y1 + i y2))``.

The convolution is evaluated with a truncated kernel: cutting the kernel off
at a radius ``R`` no smaller than the support diameter changes nothing on the
support, while the Fourier transform of the cut-off kernel,
``(1 - J0(|k| R)) / (i k1 - k2)``, is smooth. Sampling it on a periodic grid of
length at least ``R`` plus the support width gives spectral accuracy with no
wrap-around.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import sympy as sp
from scipy.special import j0

from .geometry import DomainGrid, LogPhase

THETA = sp.Symbol("theta", real=True)


class TransportError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# slices


@dataclass
class PlaneFrame:
    """A slice ``theta = const`` with a uniform periodic grid around ``Omega_theta``.

    ``lo, hi`` bound the support region in slice coordinates ``(y1, y2) =
    (x1, r)``. The periodic cell has side ``pad * max(hi - lo)`` and ``n``
    nodes per axis.
    """

    logphase: LogPhase
    theta: float
    lo: np.ndarray
    hi: np.ndarray
    n: int = 128
    pad: float = 3.0
    domain: DomainGrid | None = None

    @classmethod
    def for_domain(cls, logphase, domain, theta, n=128, pad=3.0, margin=0.1):
        """Frame whose support region is the bounding rectangle of ``Omega_theta`` plus ``margin``."""
        sc = logphase.special(np.concatenate([domain.boundary_points, domain.nodes[domain.inside]]))
        x1lo, x1hi = sc.x1.min(), sc.x1.max()
        rlo, rhi = sc.r.min(), sc.r.max()
        s1 = np.linspace(x1lo, x1hi, 161)
        s2 = np.linspace(rlo, rhi, 161)
        Y1, Y2 = np.meshgrid(s1, s2, indexing="ij")
        pts = cls._world(logphase, theta, Y1, Y2)
        inside = domain.contains(pts)
        if not inside.any():
            raise TransportError(f"slice theta={theta:.4f} does not meet the domain")
        lo = np.array([Y1[inside].min(), Y2[inside].min()]) - margin
        hi = np.array([Y1[inside].max(), Y2[inside].max()]) + margin
        return cls(logphase, float(theta), lo, hi, n=n, pad=pad, domain=domain)

    @staticmethod
    def _world(logphase, theta, y1, y2):
        loc = np.stack([y1, y2 * np.cos(theta), y2 * np.sin(theta)], axis=-1)
        return logphase.frame.world(loc)

    @property
    def e1(self):
        return self.logphase.frame.vec_world(np.array([1.0, 0.0, 0.0]))

    @property
    def e_r(self):
        return self.logphase.frame.vec_world(np.array([0.0, np.cos(self.theta), np.sin(self.theta)]))

    @property
    def e_theta(self):
        return self.logphase.frame.vec_world(np.array([0.0, -np.sin(self.theta), np.cos(self.theta)]))

    @property
    def zeta(self):
        return self.e1 + 1j * self.e_r

    @property
    def center(self):
        return (self.lo + self.hi) / 2

    @property
    def support_diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def period(self):
        return self.pad * float(np.max(self.hi - self.lo))

    @property
    def spacing(self):
        return self.period / self.n

    @cached_property
    def axes(self):
        k = np.arange(self.n) - self.n // 2
        return tuple(self.center[j] + k * self.spacing for j in range(2))

    @cached_property
    def coords(self):
        return np.meshgrid(*self.axes, indexing="ij")

    @cached_property
    def points(self):
        Y1, Y2 = self.coords
        return self._world(self.logphase, self.theta, Y1, Y2)

    @cached_property
    def z(self):
        Y1, Y2 = self.coords
        return Y1 + 1j * Y2

    @cached_property
    def support(self):
        Y1, Y2 = self.coords
        return (Y1 >= self.lo[0]) & (Y1 <= self.hi[0]) & (Y2 >= self.lo[1]) & (Y2 <= self.hi[1])

    @cached_property
    def inside(self):
        if self.domain is None:
            return self.support
        return self.domain.contains(self.points)

    def check_resolvable(self):
        if self.period < self.support_diameter + float(np.max(self.hi - self.lo)) - 1e-12:
            raise TransportError("periodic cell too small for the truncated kernel")

    def world_to_slice(self, points):
        sc = self.logphase.special(points)
        return sc.x1, sc.r


def bump_cutoff(t):
    """Smooth step: 0 for t <= 0, 1 for t >= 1, C-infinity in between."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    a = np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.maximum(1 - t, 1e-300)), 0.0)
    return a / (a + b)


def slice_extension(frame: PlaneFrame, inner_lo, inner_hi):
    """Multiplier equal to 1 on ``[inner_lo, inner_hi]`` and 0 outside ``[lo, hi]``."""
    Y = frame.coords
    out = np.ones(frame.z.shape)
    for j in range(2):
        w_lo = inner_lo[j] - frame.lo[j]
        w_hi = frame.hi[j] - inner_hi[j]
        out *= bump_cutoff((Y[j] - frame.lo[j]) / w_lo) * bump_cutoff((frame.hi[j] - Y[j]) / w_hi)
    return out


# --------------------------------------------------------------------------
# the transform


def cauchy_symbol(k1, k2, R, conjugate=False):
    """Fourier symbol of the truncated kernel ``1/(2 pi (y1 +- i y2))`` on ``|y| < R``."""
    s = -1.0 if conjugate else 1.0
    k = np.hypot(k1, k2)
    den = 1j * k1 - s * k2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (1 - j0(k * R)) / den
    return np.where(k == 0, 0.0, out)


def cauchy_transform(f, frame: PlaneFrame, conjugate=False):
    """Return ``g`` with ``(d1 + i d2) g = f`` (or ``d1 - i d2`` if ``conjugate``).

    ``f`` is sampled on ``frame.points`` and must vanish outside
    ``frame.support``; the result is accurate on the support.
    """
    f = np.asarray(f, dtype=complex)
    if f.shape[:2] != (frame.n, frame.n):
        raise ValueError(f"expected samples on a {frame.n}x{frame.n} slice grid, got {f.shape}")
    frame.check_resolvable()
    R = frame.support_diameter
    k = 2 * np.pi * np.fft.fftfreq(frame.n, d=frame.spacing)
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    sym = cauchy_symbol(K1, K2, R, conjugate)
    extra = f.ndim - 2
    sym = sym.reshape(sym.shape + (1,) * extra)
    # grid is centred: shift so the FFT sees the origin at index 0 consistently
    fh = np.fft.fft2(f, axes=(0, 1))
    return np.fft.ifft2(fh * sym, axes=(0, 1))


def cauchy_quadrature(fun, y, R, conjugate=False, n_rho=200, n_t=256):
    """Direct polar quadrature of the Cauchy integral at slice points ``y``.

    ``fun(y1, y2)`` evaluates the integrand density; ``R`` bounds its support
    distance from every ``y``. In polar coordinates the kernel singularity
    cancels against the area element, leaving a smooth integrand.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    rho, wr = np.polynomial.legendre.leggauss(n_rho)
    rho = (rho + 1) * R / 2
    wr = wr * R / 2
    t = 2 * np.pi * np.arange(n_t) / n_t
    s = -1.0 if conjugate else 1.0
    out = np.zeros(y.shape[0], dtype=complex)
    for i, (a, b) in enumerate(y):
        Rg, Tg = np.meshgrid(rho, t, indexing="ij")
        vals = fun(a - Rg * np.cos(Tg), b - Rg * np.sin(Tg))
        out[i] = np.sum(vals * np.exp(-1j * s * Tg) * wr[:, None]) * (2 * np.pi / n_t) / (2 * np.pi)
    return out


def dbar_residual(g, frame: PlaneFrame, conjugate=False):
    """``(d1 +- i d2) g`` by second-order centred differences (interior nodes)."""
    d = frame.spacing
    s = -1.0 if conjugate else 1.0
    out = np.full(g.shape, np.nan, dtype=complex)
    out[1:-1, 1:-1] = (g[2:, 1:-1] - g[:-2, 1:-1]) / (2 * d) + s * 1j * (g[1:-1, 2:] - g[1:-1, :-2]) / (2 * d)
    return out


# --------------------------------------------------------------------------
# transport equations on a slice


def _extended(frame, values, extension):
    if extension is None:
        return values * frame.support
    return values * extension.reshape(extension.shape + (1,) * (values.ndim - 2))


def solve_phase_transport(A, frame: PlaneFrame, extension=None):
    """Particular solution of ``zeta . (grad phi + A) = 0`` on the slice.

    ``A`` is a callable vector field (e.g. :class:`~diracip.expr.VectorField`);
    ``extension`` is a smooth multiplier equal to one on ``Omega_theta`` that
    cuts ``A`` off inside the support region.
    """
    f = -(A(frame.points) @ frame.zeta)
    f = _extended(frame, f, extension)
    return cauchy_transform(f, frame)


def solve_amplitude_transport(G, A, frame: PlaneFrame, phi_t, extension=None, sign=1):
    """Solve ``M_A C = G`` on a slice after factoring ``C = r^{-1/2} e^{i phi_t} B``.

    ``G`` has the slice grid as its first two axes. ``sign`` is the sign of
    ``grad(rho_variant) = sign * zeta/z``. Returns ``C``.
    """
    G = np.asarray(G, dtype=complex)
    Y1, Y2 = frame.coords
    if np.any(Y2[frame.support] <= 0):
        raise TransportError("support region crosses the axis r = 0")
    r = np.where(Y2 > 0, Y2, np.nan)
    z = frame.z
    pre = (1j * z / (2 * sign)) * np.sqrt(r) * np.exp(-1j * phi_t)
    rhs = pre.reshape(pre.shape + (1,) * (G.ndim - 2)) * G
    rhs = np.where(np.isfinite(rhs), rhs, 0.0)
    rhs = _extended(frame, rhs, extension)
    if not np.all(np.isfinite(rhs)):
        raise TransportError("right-hand side not resolvable on the slice grid")
    B = cauchy_transform(rhs, frame)
    fac = r ** (-0.5) * np.exp(1j * phi_t)
    return fac.reshape(fac.shape + (1,) * (G.ndim - 2)) * B


def transport_apply_slice(Ct, A, frame: PlaneFrame, sign=1):
    """``M C`` for ``grad rho = sign zeta/z`` on a slice, by centred differences.

    Only derivatives along the slice are needed since ``zeta`` lies in it.
    """
    Y1, Y2 = frame.coords
    z = frame.z
    d = frame.spacing
    Ct = np.asarray(Ct, dtype=complex)
    dz = np.full(Ct.shape, np.nan, dtype=complex)
    dz[1:-1, 1:-1] = (Ct[2:, 1:-1] - Ct[:-2, 1:-1]) / (2 * d) + 1j * (Ct[1:-1, 2:] - Ct[1:-1, :-2]) / (2 * d)
    zA = A(frame.points) @ frame.zeta
    ex = (1,) * (Ct.ndim - 2)
    zA = zA.reshape(zA.shape + ex)
    zz = z.reshape(z.shape + ex)
    rr = Y2.reshape(Y2.shape + ex)
    return (sign / zz) * (2 * (-1j * dz + zA * Ct) + Ct / rr)


# --------------------------------------------------------------------------
# holomorphic amplitudes


class ThetaFunction:
    """Smooth function of the slice angle, parsed like coefficient expressions (variable ``theta``)."""

    def __init__(self, expr=1):
        if isinstance(expr, str):
            from .expr import _FUNCS

            names = {"theta": THETA, "pi": sp.pi, **_FUNCS}
            expr = sp.sympify(expr, locals=names)
        self.expr = sp.sympify(expr)
        if self.expr.free_symbols - {THETA}:
            raise ValueError("theta functions may only depend on theta")
        self._f = sp.lambdify(THETA, self.expr, "numpy")
        self._df = sp.lambdify(THETA, sp.diff(self.expr, THETA), "numpy")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(self._f(t), dtype=complex), t.shape).copy()

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(self._df(t), dtype=complex), t.shape).copy()


class HolomorphicAmplitude:
    """``a(z, theta) = g(z) b(theta)`` with ``g`` rational and holomorphic on each slice.

    ``num`` and ``den`` are polynomial coefficients in ``z`` (highest degree
    first, as in :func:`numpy.polyval`). With ``conjugate=True`` the amplitude
    is ``conj(a)``, which solves ``conj(zeta) . grad a = 0`` instead.
    """

    def __init__(self, num=(1.0,), den=(1.0,), b=1, conjugate=False):
        self.num = np.atleast_1d(np.asarray(num, dtype=complex))
        self.den = np.atleast_1d(np.asarray(den, dtype=complex))
        self.b = b if isinstance(b, ThetaFunction) else ThetaFunction(b)
        self.conjugate = conjugate

    def conj(self):
        return HolomorphicAmplitude(self.num, self.den, self.b, not self.conjugate)

    def check_domain(self, logphase: LogPhase, domain: DomainGrid, tol=1e-8):
        """Reject ``g`` whose poles meet some closed slice ``Omega_theta``."""
        if len(self.den) <= 1:
            return
        roots = np.roots(self.den)
        sc = logphase.special(np.concatenate([domain.boundary_points, domain.nodes[domain.inside]]))
        thetas = np.linspace(sc.theta.min(), sc.theta.max(), 64)
        for z0 in roots:
            if z0.imag <= 0:
                continue
            loc = np.stack([np.full_like(thetas, z0.real), z0.imag * np.cos(thetas), z0.imag * np.sin(thetas)], -1)
            if np.any(domain.contains(logphase.frame.world(loc), tol=tol)):
                raise ValueError(f"pole z={z0:.4g} of the amplitude meets a slice of the domain")
        zs = sc.z
        if np.min(np.abs(np.polyval(self.den, zs))) < tol:
            raise ValueError("amplitude denominator vanishes on the domain")

    def g(self, z):
        return np.polyval(self.num, z) / np.polyval(self.den, z)

    def dg(self, z):
        n, d = self.num, self.den
        dn = np.polyder(n) if len(n) > 1 else np.zeros(1)
        dd = np.polyder(d) if len(d) > 1 else np.zeros(1)
        pn, pd = np.polyval(n, z), np.polyval(d, z)
        return (np.polyval(dn, z) * pd - pn * np.polyval(dd, z)) / pd**2

    def values_zt(self, z, theta):
        v = self.g(z) * self.b(theta)
        return np.conj(v) if self.conjugate else v

    def __call__(self, points, logphase: LogPhase):
        sc = logphase.special(points)
        return self.values_zt(sc.z, sc.theta)

    def grad(self, points, logphase: LogPhase):
        """Exact gradient: ``grad z = zeta`` and ``grad theta = e_theta / r``."""
        sc = logphase.special(points)
        gz = self.dg(sc.z) * self.b(sc.theta)
        gt = self.g(sc.z) * self.b.derivative(sc.theta) / sc.r
        out = gz[..., None] * sc.zeta + gt[..., None] * sc.e_theta
        return np.conj(out) if self.conjugate else out


def holomorphic_amplitude(g=(1.0,), b=1, den=(1.0,), logphase=None, domain=None):
    """Build ``a = g(z) b(theta)``, validating holomorphy on the slices when a domain is given."""
    amp = HolomorphicAmplitude(num=g, den=den, b=b)
    if logphase is not None and domain is not None:
        amp.check_domain(logphase, domain)
    return amp


def zeta_dot_grad_fd(fun, points, logphase: LogPhase, step=1e-3):
    """``zeta . grad f`` by centred differences of a callable in 3D."""
    sc = logphase.special(points)
    out = 0
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        out = out + sc.zeta[..., k] * (fun(points + e) - fun(points - e)) / (2 * step)
    return out
