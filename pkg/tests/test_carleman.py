import numpy as np
import pytest

from diracip.carleman import (REPORT_COLUMNS, BoxQuadrature, carleman_probe, decay_experiment_magnetic,
                              dirac_carleman_check, envelope, gamma_cutoff, hat_coefficients, regular_branch,
                              scalar_carleman_check, test_family as family, threshold_mask)
from diracip.coefficients import Coefficients
from diracip.geometry import LogPhase, build_domain, convexify, front_face

CO = Coefficients.build(A=("0.3*sin(x2)", "0.2*x1*x3", "0.1*cos(x1+x3)"), q_plus="1+0.5*x1*x2", q_minus="2+0.3*x3")
LP = LogPhase()
HS = [2.0**-k for k in (3, 4, 5)]


@pytest.fixture(scope="module")
def dom():
    return build_domain({"n": 9})


@pytest.fixture(scope="module")
def quad(dom):
    return BoxQuadrature.for_domain(dom, panels=2, order=6)


def weight(quad, h):
    return convexify(LP, h, 0.05, 20.0, require_log_bound=False,
                     points=np.concatenate([quad.points, quad.face_points]))


def test_quadrature_integrates_polynomials(quad):
    assert np.isclose(quad.weights.sum(), 1.0)
    assert np.isclose(quad.face_weights.sum(), 6.0)
    x = quad.points - quad.center
    assert np.isclose(np.sum(quad.weights * x[:, 0] ** 4), 2 * 0.5**5 / 5)


def test_threshold_mask_extremes(quad):
    # q- = 1 enters S_h once |log h^alpha| >= 1
    one = hat_coefficients(Coefficients.build(q_minus=1), quad.points, 1e-10, 0.05)
    zero = hat_coefficients(Coefficients.build(q_minus=0), quad.points, 0.1, 0.05)
    assert one.mask.all() and not zero.mask.any()
    assert not hat_coefficients(Coefficients.build(q_minus=1), quad.points, 0.1, 0.05).mask.any()
    assert np.array_equal(zero.s_dq, np.zeros_like(zero.s_dq))
    assert np.array_equal(threshold_mask(np.array([0.0, 1e-300]), 0.5, 0.05), [False, False])


def test_excluded_slab_shrinks():
    # q- = 20(x3 - 2) vanishes on a plane through the box
    pts = build_domain({"n": 33}).nodes.reshape(-1, 3)
    co = Coefficients.build(q_minus="20*(x3-2)")
    vols = [np.mean(~hat_coefficients(co, pts, 2.0**-k, 0.05).mask) for k in (4, 8, 16, 32)]
    assert np.all(np.diff(vols) < 0) and vols[0] < 1
    assert vols[-1] > 0  # nodes on the plane are never in S_h


def test_branch_matches_mask(quad):
    co = Coefficients.build(A=CO.A.exprs, q_minus="20*(x3-2)+3*x1")
    consts = []
    for h in HS:
        hat = hat_coefficients(co, quad.points, h, 0.05)
        off = ~hat.mask
        assert off.any() and hat.mask.any()
        assert np.array_equal(hat.s_dq[off], np.zeros_like(hat.s_dq[off]))
        consts.append(hat.bound_constant())
        reg = regular_branch(hat)
        assert not reg.mask.any()
        # the regular branch carries the full first-order term as 2A.D
        Dv = np.random.default_rng(0).normal(size=quad.points.shape[:1] + (2, 3)) + 0j
        assert np.allclose(reg.first_order(Dv), 2 * np.einsum("mk,mck->mc", hat.A, Dv))
    assert np.all(np.isfinite(consts))


def test_zero_and_scaled_spinors(quad):
    h = HS[0]
    w = weight(quad, h)
    hat = hat_coefficients(CO, quad.points, h, 0.05)
    v = family("bump", quad, h, LP, degree=0)[1]
    base = scalar_carleman_check(v, h, w, hat, quad)
    assert base.lhs > 0 and base.rhs > 0 and np.isfinite(base.min_C)
    lam = 3.0 - 2.0j
    scaled = scalar_carleman_check(type(v)(v.case_id, v.profiles, v.lo, v.envelope, lam * v.direction),
                                   h, w, hat, quad)
    assert np.isclose(scaled.min_C, base.min_C, rtol=1e-10)
    # span_check normalizes the maximizer, so the reported terms are scale-free too
    assert np.isclose(scaled.lhs, base.lhs, rtol=1e-10)
    d0 = dirac_carleman_check(v, h, CO, CO.q_minus, w, quad)
    d1 = dirac_carleman_check(type(v)(v.case_id, v.profiles, v.lo, v.envelope, lam * v.direction),
                              h, CO, CO.q_minus, w, quad)
    assert np.isclose(d0.min_C, d1.min_C, rtol=1e-10)
    zero = type(v)(v.case_id, v.profiles, v.lo, v.envelope, 0 * v.direction)
    _, val, grad, lap = zero.evaluate(quad.points)
    assert not np.any(val) and not np.any(grad) and not np.any(lap)


def test_envelopes_match_finite_differences(quad):
    p = quad.points[::37]
    d = 1e-6
    for kind in ("flat", "cgo", "cgobar", "wave"):
        env = envelope(kind, LP, 0.25, k=(0.0, 3.0, 0.0))
        Phi, g, lap = env(p)
        fd = np.stack([(env(p + d * e)[0] - env(p - d * e)[0]) / (2 * d) for e in np.eye(3)], -1)
        assert np.max(np.abs(fd - g)) < 1e-6 * max(1, np.abs(g).max()), kind
        fl = sum((env(p + 1e-4 * e)[0] - 2 * Phi + env(p - 1e-4 * e)[0]) / 1e-8 for e in np.eye(3))
        assert np.max(np.abs(fl - lap)) < 1e-3 * max(1, np.abs(lap).max()), kind
    with pytest.raises(ValueError):
        envelope("ripple", LP, 0.25)
    with pytest.raises(ValueError):
        family("ripple", quad, 0.25, LP)


def test_weight_ratio_bound(quad):
    pts = np.concatenate([quad.points, quad.face_points])
    for h in HS:
        w = weight(quad, h)
        # exp(phi_tilde/h) exp(-phi/h) h^(C alpha) <= 1
        log_ratio = (w.phi_tilde(pts) - LP.phi(pts)) / h + w.weight_constant * w.alpha * np.log(h)
        assert log_ratio.max() <= 1e-12


def test_small_sweep(dom):
    rep = carleman_probe(dom, CO, (0, 0, 0), HS, families=("bump", "layer"), panels=2, order=6, degree=0)
    assert len(rep.rows) == 2 * len(HS)
    C = np.array([r.min_C for r in rep.rows])
    assert np.all(np.isfinite(C)) and np.all(C > 0) and C.max() < 1e3
    lines = rep.to_csv().splitlines()
    assert tuple(lines[0].split(",")) == REPORT_COLUMNS
    assert len(lines) == 1 + len(rep.rows)
    assert set(rep.slopes) == {"bump", "layer"} and np.isfinite(rep.overall_slope)


def test_dirac_sweep_runs(dom):
    rep = carleman_probe(dom, CO, (0, 0, 0), HS[:2], families=("bump",), panels=2, order=6, degree=0, kind="dirac")
    assert all(r.boundary_plus == 0 and np.isfinite(r.min_C) for r in rep.rows)


def test_gamma_cutoff(dom):
    gam = front_face(dom, (0, 0, 0), 0.05)
    chi, trans, near = gamma_cutoff(dom, gam)
    assert chi.min() >= 0 and chi.max() <= 1
    assert np.all(chi[~near] == 1)
    far = dom.boundary_points[~gam.mask]
    # chi vanishes on the complement face
    idx = dom.boundary_nodes[~gam.mask]
    assert np.all(chi.reshape(-1)[idx] == 0) and len(far) > 0
    assert trans.any()


def test_identical_pair_has_no_boundary_term():
    dom = build_domain({"center": [0.0, 0.0, 1.1], "size": 0.15, "n": 9})
    rep = decay_experiment_magnetic(dom, CO, "0", [0.25, 0.125], n_cyl=9, u1="solve")
    assert np.all(rep.column("J") == 0) and np.all(rep.column("dirac") == 0)
    assert rep.checks["gauge_relation"] == 0
    assert rep.to_csv().count("\n") == 3
