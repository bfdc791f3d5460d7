"""Numerical probes of the two Carleman estimates and the h-dependent coefficient cutoff.

Both sides of each inequality are evaluated for closed-form test spinors by
composite Gauss-Legendre quadrature on a box, so the probes measure the
inequalities themselves and not a discretization of them. All exponential
weights are handled in log form and normalized by their maximum, which leaves
every ratio ``lhs / rhs`` unchanged.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, asdict

import numpy as np

from . import clifford as cl
from .cgo import variant_geometry
from .coefficients import Coefficients
from .fitting import LogLogSlopeFit
from .geometry import ConvexWeight, LogPhase, convexify, epsilon_of

REPORT_COLUMNS = ("case_id", "h", "alpha", "C0", "lhs", "rhs", "boundary_minus", "boundary_plus", "min_C", "mask_volume")


# --------------------------------------------------------------------------
# the cutoff set S_h and the hatted coefficients


def log_size(h, alpha):
    """``|log h^alpha|``."""
    return abs(alpha * np.log(h))


def threshold_mask(q_minus, h, alpha):
    """``S_h`` membership ``|1/q_-| <= sqrt|log h^alpha|``; zeros of ``q_-`` count as ``+inf``."""
    q = np.asarray(q_minus)
    with np.errstate(divide="ignore"):
        inv = np.where(q == 0, np.inf, 1.0 / np.abs(np.where(q == 0, 1.0, q)))
    return inv <= np.sqrt(log_size(h, alpha))


@dataclass
class HatCoefficients:
    """Coefficients of ``-Lap + A_hat(x, D) + q_hat`` at a fixed point set.

    On ``mask`` (the set ``S_h``) ``A_hat = 2A.D - (1/q_-)(sigma.Dq_-) sigma.D`` and
    ``q_hat = -(1/q_-)(sigma.Dq_-) sigma.A + q_tilde``; elsewhere ``A_hat = 2A.D``
    and ``q_hat = q_tilde``.
    """

    h: float
    alpha: float
    mask: np.ndarray
    A: np.ndarray  # (..., 3)
    s_dq: np.ndarray  # (1/q_-) sigma.Dq_- on the mask, zero elsewhere; (..., 2, 2)
    q_hat: np.ndarray  # (..., 2, 2)

    @property
    def log_size(self):
        return log_size(self.h, self.alpha)

    def first_order(self, Dv):
        """``A_hat(x, D) v`` from ``Dv[..., c, (col,) k] = D_k v_c``."""
        Dv = np.asarray(Dv)
        if Dv.ndim == self.A.ndim + 1:
            out = 2 * np.einsum("...k,...ck->...c", self.A, Dv)
            sD = np.einsum("kij,...jk->...i", cl.SIGMA, Dv)
            return out - np.einsum("...ij,...j->...i", self.s_dq, sD)
        out = 2 * np.einsum("...k,...cmk->...cm", self.A, Dv)
        sD = np.einsum("kij,...jmk->...im", cl.SIGMA, Dv)
        return out - self.s_dq @ sD

    def apply(self, v, Dv, lap_v):
        """``(-Lap + A_hat + q_hat) v`` from values, ``D v`` and ``Lap v``."""
        v = np.asarray(v)
        qv = np.einsum("...ij,...j->...i", self.q_hat, v) if v.ndim == self.A.ndim else self.q_hat @ v
        return -np.asarray(lap_v) + self.first_order(Dv) + qv

    def sup_norms(self):
        """Nodewise sup of the first- and zeroth-order coefficient norms."""
        a = np.linalg.norm(self.A, axis=-1) * 2 + np.linalg.norm(self.s_dq, ord=2, axis=(-2, -1))
        return float(np.max(a, initial=0.0)), float(np.max(np.linalg.norm(self.q_hat, ord=2, axis=(-2, -1)), initial=0.0))

    def bound_constant(self):
        """Smallest ``M`` with both sup norms ``<= M sqrt|log h^alpha|``."""
        return max(self.sup_norms()) / np.sqrt(self.log_size)


def q_tilde_values(coeffs: Coefficients, points):
    """``-i div A + A.A + sigma.curl A - q_+ q_-`` as 2x2 matrices."""
    A = coeffs.A(points)
    val = -1j * coeffs.A.divergence(points) + np.sum(A * A, axis=-1) - coeffs.q_plus(points) * coeffs.q_minus(points)
    return val[..., None, None] * cl.I2 + cl.sigma_dot(coeffs.A.curl(points))


def hat_coefficients(coeffs: Coefficients, points, h, alpha, q_tilde=None) -> HatCoefficients:
    """Build the hatted coefficients and the mask ``S_h`` at ``points``."""
    points = np.asarray(points, dtype=float)
    qm = coeffs.q_minus(points)
    mask = threshold_mask(qm, h, alpha)
    A = coeffs.A(points)
    sdq = cl.sigma_dot(-1j * coeffs.q_minus.grad(points))
    inv = np.where(mask, 1.0 / np.where(mask, qm, 1.0), 0.0)
    s_dq = inv[..., None, None] * sdq
    qt = q_tilde_values(coeffs, points) if q_tilde is None else np.broadcast_to(q_tilde, A.shape[:-1] + (2, 2))
    q_hat = qt - s_dq @ cl.sigma_dot(A)
    return HatCoefficients(h, alpha, mask, A, s_dq, q_hat)


# --------------------------------------------------------------------------
# box quadrature


@dataclass
class BoxQuadrature:
    """Composite Gauss-Legendre rule on ``center + [-size/2, size/2]^3`` and on its faces."""

    center: np.ndarray
    size: float
    points: np.ndarray
    weights: np.ndarray
    face_points: np.ndarray
    face_weights: np.ndarray
    face_normals: np.ndarray

    @classmethod
    def build(cls, center, size, panels=8, order=8):
        center = np.asarray(center, dtype=float)
        t, w = np.polynomial.legendre.leggauss(order)
        edges = np.linspace(-size / 2, size / 2, panels + 1)
        x = np.concatenate([(a + b) / 2 + (b - a) / 2 * t for a, b in zip(edges[:-1], edges[1:])])
        wx = np.concatenate([(b - a) / 2 * w for a, b in zip(edges[:-1], edges[1:])])
        g = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
        W = (wx[:, None, None] * wx[None, :, None] * wx[None, None, :]).reshape(-1)
        fp, fw, fn = [], [], []
        a, b = np.meshgrid(x, x, indexing="ij")
        ww = (wx[:, None] * wx[None, :]).reshape(-1)
        for k in range(3):
            o = [j for j in range(3) if j != k]
            for side in (-1, 1):
                p = np.zeros((a.size, 3))
                p[:, o[0]] = a.ravel()
                p[:, o[1]] = b.ravel()
                p[:, k] = side * size / 2
                nrm = np.zeros(3)
                nrm[k] = side
                fp.append(p)
                fw.append(ww)
                fn.append(np.broadcast_to(nrm, p.shape))
        return cls(center, float(size), g + center, W, np.concatenate(fp) + center, np.concatenate(fw), np.concatenate(fn))

    @classmethod
    def for_domain(cls, domain, panels=8, order=8):
        if domain.kind != "box":
            raise ValueError("Carleman probes use box domains")
        if np.ptp(domain.size) > 0:
            raise ValueError("Carleman probes use cubes")
        return cls.build(domain.center, float(np.max(domain.size)), panels, order)


# --------------------------------------------------------------------------
# closed-form test spinors


@dataclass
class TestSpinor:
    """``v(x) = c * prod_k f_k(x_k - lo_k) * exp(Phi(x))`` with exact derivatives.

    ``profiles[k]`` returns ``(f, f', f'')`` on offsets from the lower box face;
    ``envelope`` returns ``(Phi, grad Phi, Lap Phi)`` (complex) at points.
    """

    __test__ = False  # not a pytest class

    case_id: str
    profiles: tuple
    lo: np.ndarray
    envelope: object
    direction: np.ndarray

    def evaluate(self, points):
        """Return ``(log_env, v0, grad v0, Lap v0)`` where ``v = exp(log_env) * v0``.

        Keeping the envelope in log form lets callers combine it with the
        Carleman weight before exponentiating.
        """
        points = np.asarray(points, dtype=float)
        F = [p(points[..., k] - self.lo[k]) for k, p in enumerate(self.profiles)]
        f = [a[0] for a in F]
        P = f[0] * f[1] * f[2]
        gP = np.stack([F[k][1] * np.prod([f[j] for j in range(3) if j != k], axis=0) for k in range(3)], axis=-1)
        lP = sum(F[k][2] * np.prod([f[j] for j in range(3) if j != k], axis=0) for k in range(3))
        Phi, gPhi, lPhi = self.envelope(points)
        grad = gP + P[..., None] * gPhi
        lap = lP + 2 * np.sum(gP * gPhi, axis=-1) + P * (lPhi + np.sum(gPhi * gPhi, axis=-1))
        c = self.direction
        return Phi, P[..., None] * c, grad[..., None, :] * c[:, None], lap[..., None] * c

    def __call__(self, points):
        Phi, v, g, lap = self.evaluate(points)
        E = np.exp(Phi)
        return E[..., None] * v, E[..., None, None] * g, E[..., None] * lap


def bump_profile(L, power=0):
    """``s (L - s) (s/L)^power`` and its first two derivatives."""

    def prof(s):
        b, db, d2b = s * (L - s), L - 2 * s, np.full_like(s, -2.0)
        t = s / L
        m = t**power
        dm = power * t ** max(power - 1, 0) / L
        d2m = power * (power - 1) * t ** max(power - 2, 0) / L**2
        return b * m, db * m + b * dm, d2b * m + 2 * db * dm + b * d2m

    return prof


def layer_profile(L, delta, power=0):
    """``(1 - e^{-s/delta})(1 - e^{-(L-s)/delta}) (s/L)^power``: vanishing at both ends in a layer of width ``delta``."""

    def prof(s):
        a, b = np.exp(-s / delta), np.exp(-(L - s) / delta)
        u, w = 1 - a, 1 - b
        du, dw = a / delta, -b / delta
        d2u, d2w = -a / delta**2, -b / delta**2
        f, df, d2f = u * w, du * w + u * dw, d2u * w + 2 * du * dw + u * d2w
        t = s / L
        m = t**power
        dm = power * t ** max(power - 1, 0) / L
        d2m = power * (power - 1) * t ** max(power - 2, 0) / L**2
        return f * m, df * m + f * dm, d2f * m + 2 * df * dm + f * d2m

    return prof


def _perp(g):
    """A unit vector orthogonal to ``g``."""
    g = g / np.linalg.norm(g)
    e = np.eye(3)[np.argmin(np.abs(g))]
    p = np.cross(g, e)
    return p / np.linalg.norm(p)


def envelope(kind, logphase: LogPhase, h, k=None):
    """Log-envelopes: ``none``, ``flat`` (``-phi/h``), ``cgo`` (``-rho/h``), ``cgobar`` (``-conj(rho)/h``), ``wave`` (``i k.x``)."""
    lp = logphase
    if kind == "none":
        return lambda p: (np.zeros(p.shape[:-1], complex), np.zeros(p.shape, complex), np.zeros(p.shape[:-1], complex))
    if kind == "flat":
        def env(p):
            d2 = np.sum((p - lp.x0) ** 2, axis=-1)
            return -lp.phi(p) / h + 0j, -lp.grad_phi(p) / h + 0j, -(1.0 / d2) / h + 0j
        return env
    if kind in ("cgo", "cgobar"):
        c = np.conj if kind == "cgobar" else (lambda x: x)
        return lambda p: (-c(lp.rho(p)) / h, -c(lp.grad_rho(p)) / h, -c(lp.lap_rho(p)) / h)
    if kind == "wave":
        k = np.asarray(k, dtype=float)
        return lambda p: (1j * (p @ k), np.broadcast_to(1j * k, p.shape), np.zeros(p.shape[:-1], complex))
    raise ValueError(f"unknown envelope {kind!r}")


FAMILIES = ("bump", "layer", "oscillatory")
_DIRS = (np.array([1.0, 0.0], dtype=complex), np.array([0.0, 1.0], dtype=complex))


def test_family(name, quad: BoxQuadrature, h, logphase: LogPhase, degree=1):
    """Spanning set of a test family at scale ``h``.

    Each member is a profile times a monomial of degree ``<= degree`` per
    axis, times an envelope, times a basis spinor. Bumps and layers carry the
    ``none`` and ``flat`` envelopes; the oscillatory family carries the
    exact-phase ``cgo``/``cgobar`` envelopes and a plane wave at the
    characteristic frequency.
    """
    L = quad.size
    lo = quad.center - L / 2
    if name == "bump":
        make = lambda j: bump_profile(L, j)
        envs = ("none", "flat")
    elif name == "layer":
        make = lambda j: layer_profile(L, 2 * h, j)
        envs = ("none", "flat")
    elif name == "oscillatory":
        make = lambda j: bump_profile(L, j)
        envs = ("cgo", "cgobar", "wave")
    else:
        raise ValueError(f"unknown test family {name!r}; choose from {FAMILIES}")
    g = logphase.grad_phi(quad.center[None])[0]
    kwave = np.linalg.norm(g) * _perp(g) / h
    out = []
    powers = [(a, b, c) for a in range(degree + 1) for b in range(degree + 1) for c in range(degree + 1)]
    for e in envs:
        env = envelope(e, logphase, h, kwave)
        for j in powers:
            prof = tuple(make(pj) for pj in j)
            for d, c in enumerate(_DIRS):
                out.append(TestSpinor(f"{name}:{e}:{j[0]}{j[1]}{j[2]}:{d}", prof, lo, env, c))
    return out


# --------------------------------------------------------------------------
# the inequalities


@dataclass
class CarlemanRow:
    case_id: str
    h: float
    alpha: float
    C0: float
    lhs: float
    rhs: float
    boundary_minus: float
    boundary_plus: float
    min_C: float
    mask_volume: float

    def as_dict(self):
        return asdict(self)


def _columns(spinors, h, weight: ConvexWeight, quad: BoxQuadrature, kind, hat=None, coeffs=None, q=None):
    """Weighted samples ``w v``, ``w grad v``, ``w P v`` and ``w dv/dnu`` for each spinor, as matrix columns.

    Each column is rescaled by its own maximal log-weight; ratios of quadratic
    forms are invariant under this once the Gram matrices are diagonally
    normalized in ``_max_ratio``.
    """
    lw = weight.log_weight(quad.points)
    lwb = weight.log_weight(quad.face_points)
    if kind == "dirac":
        A = coeffs.A(quad.points)
        qv = q(quad.points) if callable(q) else np.full(len(quad.points), complex(q))
    cols = {"v": [], "g": [], "P": [], "b": []}
    for u in spinors:
        Phi, val, grad, lap = u.evaluate(quad.points)
        Phib, _, gb, _ = u.evaluate(quad.face_points)
        e, eb = lw + Phi, lwb + Phib
        top = max(e.real.max(), eb.real.max())
        E, Eb = np.exp(e - top), np.exp(eb - top)
        if kind == "scalar":
            Pv = hat.apply(val, -1j * grad, lap)
        else:
            cov = -1j * grad + A[:, None, :] * val[..., None]
            Pv = np.einsum("kij,mjk->mi", cl.SIGMA, cov) + qv[:, None] * val
        cols["v"].append((E[:, None] * val).ravel())
        cols["g"].append((E[:, None, None] * grad).ravel())
        cols["P"].append((E[:, None] * Pv).ravel())
        cols["b"].append((Eb[:, None] * np.einsum("mck,mk->mc", gb, quad.face_normals)).ravel())
    return {k: np.array(v).T for k, v in cols.items()}


def _gram(X, w):
    return X.conj().T @ (w[:, None] * X)


def _forms(cols, h, weight: ConvexWeight, quad: BoxQuadrature, kind, eps_lhs):
    """Hermitian forms of every inequality term on the span of the columns."""
    W = np.repeat(quad.weights, 2)
    if kind == "dirac":
        n0 = _gram(cols["v"], W)
        nP = _gram(cols["P"], W)
        z = np.zeros_like(n0)
        return {"lhs": n0, "rhs": eps_lhs * nP, "minus": z, "plus": z}
    Wg = np.repeat(quad.weights, 6)
    dphi = np.einsum("mk,mk->m", weight.logphase.grad_phi(quad.face_points), quad.face_normals)
    Wb = np.repeat(quad.face_weights * dphi, 2)
    minus = -h**3 * _gram(cols["b"], np.where(Wb < 0, Wb, 0.0))
    plus = h**3 * _gram(cols["b"], np.where(Wb > 0, Wb, 0.0))
    lhs = (h**2 / eps_lhs) * (_gram(cols["v"], W) + h**2 * _gram(cols["g"], Wg)) + minus
    rhs = h**4 * _gram(cols["P"], W) + plus
    return {"lhs": lhs, "rhs": rhs, "minus": minus, "plus": plus}


def _max_ratio(L, R, rcond=1e-12):
    """``max_c (c* L c) / (c* R c)`` over the span, and a maximizing ``c``.

    Directions where ``R`` is numerically singular relative to its largest
    eigenvalue are projected out.
    """
    d = np.real(np.diag(R)).copy()
    d[d <= 0] = 1.0
    s = 1 / np.sqrt(d)
    Ls, Rs = s[:, None] * L * s, s[:, None] * R * s
    ev, U = np.linalg.eigh(Rs)
    keep = ev > rcond * ev.max()
    T = U[:, keep] / np.sqrt(ev[keep])
    lam, V = np.linalg.eigh(T.conj().T @ Ls @ T)
    return float(lam[-1]), s * (T @ V[:, -1])


def span_check(spinors, h, weight: ConvexWeight, quad: BoxQuadrature, kind="scalar", hat=None, coeffs=None, q=None,
               case_id=None, eps_lhs=None) -> CarlemanRow:
    """Smallest constant making the estimate hold on the span of ``spinors``.

    ``kind="scalar"``: the second-order estimate,
    ``(h^2/eps)(|w v|^2 + |w hDv|^2) - h^3 int_{-} dphi/dnu |w dv/dnu|^2
    <= C (|w h^2 (-Lap + A_hat + q_hat) v|^2 + h^3 int_{+} dphi/dnu |w dv/dnu|^2)``.
    ``kind="dirac"``: ``|w u|^2 <= C eps |w (sigma.(D+A) + q) u|^2``.
    Here ``w = exp(phi_tilde/h)``. ``eps_lhs`` overrides the explicit ``eps`` factor
    (the weight keeps its own). The reported terms belong to the maximizer.
    """
    eps_lhs = weight.epsilon if eps_lhs is None else eps_lhs
    cols = _columns(spinors, h, weight, quad, kind, hat, coeffs, q)
    F = _forms(cols, h, weight, quad, kind, eps_lhs)
    lam, c = _max_ratio(F["lhs"], F["rhs"])
    val = {k: float(np.real(c.conj() @ M @ c)) for k, M in F.items()}
    if hat is not None and hat.mask.size == quad.weights.size:
        vol = float(np.sum(quad.weights[hat.mask.reshape(-1)]))
    else:
        vol = float("nan")
    cid = case_id or (spinors[0].case_id if len(spinors) == 1 else "span")
    return CarlemanRow(cid, h, weight.alpha, weight.C0, val["lhs"], val["rhs"], val["minus"], val["plus"], lam, vol)


def scalar_carleman_check(v: TestSpinor, h, weight: ConvexWeight, hat: HatCoefficients, quad: BoxQuadrature,
                          case_id=None, eps_lhs=None) -> CarlemanRow:
    """Both sides of the second-order estimate for one test spinor; ``min_C = lhs / rhs``."""
    return span_check([v], h, weight, quad, "scalar", hat=hat, case_id=case_id, eps_lhs=eps_lhs)


def dirac_carleman_check(u: TestSpinor, h, coeffs: Coefficients, q, weight: ConvexWeight, quad: BoxQuadrature,
                         case_id=None, eps_lhs=None) -> CarlemanRow:
    """Both sides of the Dirac estimate for one test spinor; ``min_C = lhs / (eps rhs)``, ``rhs`` reported as ``eps rhs``."""
    return span_check([u], h, weight, quad, "dirac", coeffs=coeffs, q=q, case_id=case_id, eps_lhs=eps_lhs)


def fixed_epsilon_weight(weight: ConvexWeight, epsilon) -> ConvexWeight:
    """Copy of ``weight`` with ``eps`` frozen (no h-dependence)."""
    return ConvexWeight(weight.logphase, weight.h, weight.alpha, weight.C0, float(epsilon), weight.sup_phi,
                        weight.sup_phi2)


# --------------------------------------------------------------------------
# sweeps


@dataclass
class CarlemanReport:
    rows: list
    kind: str
    slopes: dict = field(default_factory=dict)  # family -> slope of log min_C vs log h
    overall_slope: float = float("nan")

    def worst_by_h(self, prefix=None):
        """``{h: max min_C}`` over the rows (optionally one family)."""
        out = {}
        for r in self.rows:
            if prefix is not None and not r.case_id.startswith(prefix):
                continue
            out[r.h] = max(out.get(r.h, 0.0), r.min_C)
        return dict(sorted(out.items()))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in sorted(self.rows, key=lambda r: (r.case_id, -r.h)):
            d = r.as_dict()
            w.writerow([d["case_id"]] + [repr(float(d[c])) for c in REPORT_COLUMNS[1:]])
        return buf.getvalue()


def _slope(worst):
    hs = np.array(list(worst))
    cs = np.array(list(worst.values()))
    ok = np.isfinite(cs) & (cs > 0)
    if ok.sum() < 2:
        return float("nan")
    return LogLogSlopeFit().fit(hs[ok], cs[ok]).slope_


def _finish(report: CarlemanReport, families):
    for f in families:
        report.slopes[f] = _slope(report.worst_by_h(f))
    report.overall_slope = _slope(report.worst_by_h())
    return report


def carleman_probe(domain, coeffs: Coefficients, x0, h_grid, alpha=0.05, C0=20.0, families=FAMILIES,
                   fixed_epsilon=False, panels=6, order=8, kind="scalar", q=None, omega=None, degree=1):
    """Sweep the second-order (``kind="scalar"``) or Dirac (``kind="dirac"``) estimate over ``h_grid``.

    One row per family and ``h``: the supremum of the ratio over the family's span.
    ``fixed_epsilon=True`` freezes the weight's convexification at
    ``eps(max h)`` while the explicit ``eps`` factor still follows ``eps(h)``;
    a float freezes it at that value.
    """
    quad = BoxQuadrature.for_domain(domain, panels, order)
    lp = LogPhase(np.asarray(x0, dtype=float), omega if omega is not None else (1.0, 0.0, 0.0))
    pts_all = np.concatenate([quad.points, quad.face_points])
    if fixed_epsilon is True:
        fixed_epsilon = epsilon_of(max(h_grid), alpha, C0)
    rows = []
    for h in h_grid:
        w = convexify(lp, h, alpha, C0, require_log_bound=False, points=pts_all)
        eps_h = w.epsilon
        if fixed_epsilon:
            w = fixed_epsilon_weight(w, fixed_epsilon)
        hat = hat_coefficients(coeffs, quad.points, h, alpha) if kind == "scalar" else None
        qq = q if q is not None else coeffs.q_minus
        for fam in families:
            basis = test_family(fam, quad, h, lp, degree)
            rows.append(span_check(basis, h, w, quad, kind, hat=hat, coeffs=coeffs, q=qq, case_id=fam, eps_lhs=eps_h))
    return _finish(CarlemanReport(rows, kind), families)


# --------------------------------------------------------------------------
# boundary-term decay experiments


DECAY_COLUMNS = ["h", "epsilon", "mask_volume", "s_h", "off_s_h", "regular", "coupling", "dirac", "dirac_lhs",
                 "J", "chi_ok"]


@dataclass
class DecayRow:
    h: float
    epsilon: float
    mask_volume: float  # |S_h| / |Omega|
    s_h: float  # h^3 |e^{-phi_hat/h} (-Lap + A_hat + q_hat) W1_+|^2 on S_h
    off_s_h: float  # same quantity on Omega \ S_h
    regular: float  # h^3 |e^{-phi_hat/h} (-Lap + 2 A2.D + q_tilde2) W1_+|^2 on Omega
    coupling: float  # h^3 |e^{-phi_hat/h} (sigma.Dq2_-) W1_-|^2 on Omega
    dirac: float  # h^3 eps |e^{-phi_hat/h} chi W_-|^2 on Omega
    dirac_lhs: float  # h^3 |e^{-phi_hat/h} (sigma.Dq2_-) W_-|^2 on Omega \ S_h
    J: float  # Frobenius norm of the boundary block (nan when not computed)
    chi_ok: bool  # supp grad chi inside S_h

    def as_dict(self):
        return asdict(self)


@dataclass
class DecayReport:
    kind: str
    rows: list
    alpha: float
    C0: float
    weight_constant: float  # C with exp(-2 phi_hat/h) <= h^(-C alpha) exp(-2 phi/h)
    slopes: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    @property
    def hs(self):
        return np.array([r.h for r in self.rows])

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    @property
    def J_monotone(self):
        """``|J|`` strictly decreases as ``h`` decreases."""
        order = np.argsort(-self.hs)
        J = self.column("J")[order]
        return bool(np.all(np.isfinite(J)) and np.all(np.diff(J) < 0))

    def threshold(self, target):
        """``target - C alpha - 0.3``: the slope margin for a claimed ``h^(target - C alpha)`` bound."""
        return target - self.weight_constant * self.alpha - 0.3

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DECAY_COLUMNS)
        for r in sorted(self.rows, key=lambda r: -r.h):
            d = r.as_dict()
            w.writerow([repr(float(d[c])) if c != "chi_ok" else int(d[c]) for c in DECAY_COLUMNS])
        return buf.getvalue()


def regular_branch(hat: HatCoefficients) -> HatCoefficients:
    """The same coefficients with ``S_h`` emptied: ``2A.D`` and ``q_tilde``."""
    qt = hat.q_hat + hat.s_dq @ cl.sigma_dot(hat.A)
    return HatCoefficients(hat.h, hat.alpha, np.zeros_like(hat.mask), hat.A, np.zeros_like(hat.s_dq), qt)


def _conjugated_block(cyl, U, h, cols):
    """``M``, ``D`` and Laplacian of ``W1 = exp(E/h) M`` divided by ``exp(E/h)``, ``M`` the column block."""
    _, _, grad_v, lap_v = variant_geometry(cyl, U.variant)
    gE, lE = -grad_v, -lap_v
    M = U.stack(h)[..., :, cols]
    gM = cyl.grad(M)
    DM = -1j * (gM + (gE / h)[..., None, None, :] * M[..., None])
    lap = cyl.laplacian(M) + (2 / h) * np.einsum("...k,...abk->...ab", gE, gM)
    lap = lap + (lE / h + cl.bdot(gE, gE) / h**2)[..., None, None] * M
    return M, DM, lap


def _dirac_conjugated(cs, M, DM):
    """``exp(-E/h) L_V (exp(E/h) M)`` from the conjugated derivatives."""
    ALPHA = cl.p_dirac(np.eye(3))
    PD = np.einsum("kij,...jmk->...im", ALPHA, DM + cs.A[..., None, None, :] * M[..., None])
    return PD + cs.Q @ M


def gamma_cutoff(grid, gamma, delta=(0.15, 0.35)):
    """``chi = 1 - chi0`` with ``chi0 = 1`` within ``delta[0]`` of ``Gamma^c`` and ``0`` beyond ``delta[1]``.

    Distances are to the complement face samples and ``delta`` is relative to the
    smallest box side. Returns ``(chi, transition)`` node fields; ``transition``
    marks ``supp grad chi``.
    """
    from scipy.spatial import cKDTree

    L = float(np.min(grid.size))
    d0, d1 = delta[0] * L, delta[1] * L
    far = grid.boundary_points[~gamma.mask]
    nodes = grid.nodes.reshape(-1, 3)
    if far.size == 0:
        d = np.full(nodes.shape[0], np.inf)
    else:
        d = cKDTree(far).query(nodes)[0]
    t = np.clip((d1 - d) / (d1 - d0), 0.0, 1.0)
    chi0 = t * t * t * (10 - 15 * t + 6 * t * t)
    near_v = d < d1
    transition = (d > d0) & (d < d1)
    return (1 - chi0).reshape(grid.shape), transition.reshape(grid.shape), near_v.reshape(grid.shape)


def decay_components(W1, cyl, h, weight: ConvexWeight, coeffs2: Coefficients, cols, alpha):
    """The explicit CGO components of the boundary-term bounds at one ``h``."""
    M, DM, lap = _conjugated_block(cyl, W1, h, cols)
    E = W1.exponent()
    ell = E.real / h + weight.log_weight(cyl.points, sign=-1)
    wts = cyl.weights * np.exp(2 * ell)
    hat = hat_coefficients(coeffs2, cyl.points, h, alpha)
    reg = regular_branch(hat)
    Mp, DMp, lp_ = M[..., :2, :], DM[..., :2, :, :], lap[..., :2, :]
    T_hat = hat.apply(Mp, DMp, lp_)
    T_reg = reg.apply(Mp, DMp, lp_)
    sdq = cl.sigma_dot(-1j * coeffs2.q_minus.grad(cyl.points))
    T_cpl = sdq @ M[..., 2:, :]

    def sq(T, sel=1.0):
        dens = np.sum(np.abs(T) ** 2, axis=(-2, -1))
        return float(h**3 * np.sum(wts * sel * dens))

    vol = float(np.sum(cyl.weights))
    return {
        "s_h": sq(T_hat, hat.mask),
        "off_s_h": sq(T_hat, ~hat.mask),
        "regular": sq(T_reg),
        "coupling": sq(T_cpl),
        "mask_volume": float(np.sum(cyl.weights * hat.mask)) / vol,
    }


def _box_block(cyl, U, h, cols, nodes, cs2):
    """``W1`` and ``L_{V2} W1`` on box nodes (4 x k blocks) from exact cylinder data."""
    M, DM, _ = _conjugated_block(cyl, U, h, cols)
    G = _dirac_conjugated(cs2, M, DM)
    pts = nodes.reshape(-1, 3)
    e = np.exp(U.exponent(pts) / h)[:, None, None]
    return e * cyl.interpolate(M, pts), e * cyl.interpolate(G, pts)


def decay_experiment(kind, domain, coeffs1: Coefficients, coeffs2: Coefficients, h_grid, x0=(0.0, 0.0, 0.0),
                     omega=(1.0, 0.0, 0.0), alpha=0.05, C0=20.0, order=1, amplitude1=None, amplitude2=None,
                     n_cyl=17, gamma_margin=0.05, cutoff=(0.15, 0.35), solver="decoupled", u1="ansatz",
                     systems=None):
    """Boundary-term decay scan for the magnetic (right block) or electric (left block) case.

    ``W = W1 - W2`` with ``W1`` the column block of the CGO ansatz for ``V1`` and
    ``W2`` solving the ``V2`` system with ``W2_+ = W1_+`` on the boundary; ``W``
    is computed directly from ``L_{V2} W = L_{V2} W1``, ``W_+ = 0``. With
    ``u1="solve"`` the ansatz is first replaced by the discrete ``V1`` solution
    with the same boundary data.
    """
    from .cgo import build_ansatz
    from .geometry import front_face
    from .solver import assemble, assemble_decoupled, boundary_matrix_inner, boundary_samples, normal_derivative
    from .spectral import CylinderGrid

    if kind not in ("magnetic", "electric"):
        raise ValueError("kind must be 'magnetic' or 'electric'")
    cols = slice(2, 4) if kind == "magnetic" else slice(0, 2)
    lp = LogPhase(np.asarray(x0, dtype=float), omega)
    cyl = CylinderGrid.covering(lp, domain, n=(n_cyl,) * 3, pad=0.02)
    U1 = build_ansatz("plus_rho", cyl, coeffs1, amplitude1, order=order)
    U2 = build_ansatz("minus_rhobar", cyl, coeffs2, amplitude2, order=order)
    cs2 = coeffs2.sample(cyl.points)
    gamma = front_face(domain, x0, gamma_margin)
    chi, transition, near_v = gamma_cutoff(domain, gamma, cutoff)
    nodes = domain.nodes
    q2m = coeffs2.q_minus(nodes)
    if np.any(np.abs(q2m[near_v]) < 1e-8):
        raise ValueError("q2_- vanishes in the neighbourhood of Gamma^c carrying the cutoff")
    q1b = coeffs1.q_minus(domain.boundary_points)
    if np.any(np.abs(q1b[~gamma.mask]) < 1e-8):
        raise ValueError("q1_- must be nonzero on Gamma^c")
    make = assemble_decoupled if solver == "decoupled" else assemble
    if systems is None:
        systems = (make(domain, coeffs1), make(domain, coeffs2))
    S1, S2 = systems
    pts_all = np.concatenate([nodes.reshape(-1, 3), domain.boundary_points, cyl.points[cyl.mask]])
    nb = domain.boundary_nodes.size
    zero = np.zeros((S2.n_boundary, 2))
    rows, sup2 = [], 0.0
    for h in sorted(h_grid, reverse=True):
        w = convexify(lp, h, alpha, C0, require_log_bound=False, points=pts_all)
        sup2 = w.sup_phi2
        comp = decay_components(U1, cyl, h, w, coeffs2, cols, alpha)
        W1, G = _box_block(cyl, U1, h, cols, nodes, cs2)
        if u1 == "solve":
            data = [W1[S1.boundary_index, :2, c] for c in range(2)]
            W = np.stack([S1.solve(f).reshape(-1, 4) - S2.solve(f).reshape(-1, 4) for f in data], axis=-1)
        else:
            W = np.stack([S2.solve(zero, source=G[..., c]).reshape(-1, 4) for c in range(2)], axis=-1)
        W = W.reshape(domain.shape + (4, 2))
        ellb = (w.log_weight(nodes.reshape(-1, 3), sign=-1)).reshape(domain.shape)
        vw = domain.volume_weights * np.exp(2 * ellb)
        Wm = W[..., 2:, :]
        dens = np.sum(np.abs(chi[..., None, None] * Wm) ** 2, axis=(-2, -1))
        dirac = h**3 * w.epsilon * float(np.sum(vw * dens))
        off = ~threshold_mask(q2m, h, alpha)
        sdq = cl.sigma_dot(-1j * coeffs2.q_minus.grad(nodes))
        dl = np.sum(np.abs(sdq @ Wm) ** 2, axis=(-2, -1))
        dirac_lhs = h**3 * float(np.sum(vw * off * dl))
        chi_ok = bool(np.all(~off[transition]))
        J = float("nan")
        if kind == "magnetic":
            dn = normal_derivative(domain, W)[:, :2, :] / q1b[:, None, None]
            bpts = domain.boundary_points
            S2b = cyl.interpolate(U2.stack(h)[..., :2, 0:2], bpts)
            U2b = np.exp(U2.exponent(bpts) / h)[:, None, None] * S2b
            J = float(np.linalg.norm(boundary_matrix_inner(domain, dn, U2b, mask=~gamma.mask)))
        rows.append(DecayRow(h, w.epsilon, comp["mask_volume"], comp["s_h"], comp["off_s_h"], comp["regular"],
                             comp["coupling"], dirac, dirac_lhs, J, chi_ok))
    rep = DecayReport(kind, rows, alpha, C0, C0 * sup2)
    hs = rep.hs
    for name in ("s_h", "off_s_h", "regular", "coupling", "dirac", "J"):
        y = rep.column(name)
        ok = np.isfinite(y) & (y > 0)
        rep.slopes[name] = LogLogSlopeFit().fit(hs[ok], y[ok]).slope_ if ok.sum() >= 2 else float("nan")
    rep.checks["gamma_area"] = gamma.area
    return rep


def decay_experiment_magnetic(domain, coeffs1: Coefficients, p, h_grid, **kw):
    """Decay scan for the gauge pair ``V2 = gauge(V1, p)``; also checks the gauge relation of the matched solve."""
    from .solver import assemble, assemble_decoupled, gauge_transform

    coeffs2, smap = gauge_transform(coeffs1, p)
    make = assemble_decoupled if kw.get("solver", "decoupled") == "decoupled" else assemble
    systems = kw.pop("systems", None) or (make(domain, coeffs1), make(domain, coeffs2))
    rep = decay_experiment("magnetic", domain, coeffs1, coeffs2, h_grid, systems=systems, **kw)
    S1, S2 = systems
    nodes = domain.nodes
    b = domain.boundary_points
    f = np.stack([np.exp(b[:, 0] + 0.5j * b[:, 1]), np.cos(b[:, 2]) + 0j], axis=-1)
    fn = np.zeros((domain.n**3, 2), dtype=complex)
    fn[domain.boundary_nodes] = f
    f = fn[S1.boundary_index]
    u1 = S1.solve(f)
    u2 = S2.solve(f)
    mapped = smap(u1, nodes)
    rep.checks["gauge_relation"] = float(np.max(np.abs(u2 - mapped)) / np.max(np.abs(u1)))
    return rep


def decay_experiment_electric(domain, coeffs1: Coefficients, coeffs2: Coefficients, h_grid, **kw):
    """Component scan for a pair sharing ``A``; the composite boundary block is not formed."""
    a1 = coeffs1.A(domain.nodes)
    a2 = coeffs2.A(domain.nodes)
    if not np.allclose(a1, a2, atol=1e-12):
        raise ValueError("the electric scan needs A1 = A2")
    return decay_experiment("electric", domain, coeffs1, coeffs2, h_grid, **kw)
