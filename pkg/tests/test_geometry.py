import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diracip import clifford as cl
from diracip.geometry import (AdmissibilityError, DomainError, LogPhase, admissible_h_max, boundary_split,
                              build_domain, build_phase, convexify, eikonal_residual, epsilon_of, front_face)

BALL = {"shape": "ball", "center": [0, 0, 2], "radius": 1.0, "n": 17}
BOX = {"shape": "box", "center": [0, 0, 2], "size": 1.0, "n": 17}


def test_ball_area_and_volume():
    g = build_domain(BALL)
    assert abs(g.surface_area - 4 * np.pi) / (4 * np.pi) < 0.05
    assert abs(g.volume - 4 * np.pi / 3) / (4 * np.pi / 3) < 0.1
    assert np.allclose(np.linalg.norm(g.boundary_normals, axis=1), 1)


def test_box_area_exact():
    g = build_domain({**BOX, "size": [1.0, 0.5, 0.8]})
    area = 2 * (0.5 + 0.8 + 0.4)
    assert abs(g.surface_area - area) / area < 0.01
    assert abs(g.volume - 0.4) < 1e-12
    assert g.boundary_nodes.min() >= 0


@pytest.mark.parametrize("spec", [{"shape": "ball", "center": [0, 0, 0.5], "radius": 1.0},
                                  {"shape": "box", "center": [0, 0, 0.4], "size": 1.0},
                                  {"shape": "torus"}, {"shape": "box", "n": 3}])
def test_domain_rejections(spec):
    with pytest.raises(DomainError):
        build_domain(spec)


def test_front_face_sign_oracle():
    g = build_domain(BALL)
    x0 = np.array([0.0, 0.0, -1.0])
    F = front_face(g, x0)
    s = np.einsum("ij,ij->i", g.boundary_points - x0, g.boundary_normals)
    assert np.array_equal(F.mask, s <= 0)
    assert 0 < F.area < g.surface_area / 2
    assert len(F) + len(F.complement) == len(g.boundary_weights)


def test_front_face_tends_to_lower_hemisphere():
    g = build_domain(BALL)
    lower = g.boundary_normals[:, 2] <= 0
    far = front_face(g, [0, 0, -1e6]).mask
    assert np.mean(far == lower) > 0.99


def test_front_face_rejects_pole_in_hull():
    with pytest.raises(DomainError):
        front_face(build_domain(BOX), [0, 0, 2])


@pytest.mark.parametrize("spec", [BALL, BOX])
def test_minus_boundary_is_front_face(spec):
    g = build_domain(spec)
    ph = build_phase(g, (0, 0, 0), (1, 0, 0))
    sp = boundary_split(g, ph)
    F = front_face(g, (0, 0, 0))
    strict = np.abs(sp.dphi_dnu) > 1e-12 * np.linalg.norm(ph.logphase.grad_phi(g.boundary_points), axis=1)
    assert np.array_equal(sp.minus[strict], F.mask[strict])
    assert np.all(sp.plus | sp.minus)
    assert np.isclose(sp.weights_plus.sum() + sp.weights_minus.sum(), g.surface_area)


def test_closed_form_eikonal_and_laplacian():
    g = build_domain(BOX)
    ph = build_phase(g)
    assert np.max(np.abs(cl.bdot(ph.grad_rho, ph.grad_rho))) < 1e-14
    # grad rho of phi + i psi agrees with zeta / z
    lp, p = ph.logphase, ph.points[::97]
    d = 1e-6
    fd = np.stack([(lp.rho(p + d * e) - lp.rho(p - d * e)) / (2 * d) for e in np.eye(3)], -1)
    assert np.max(np.abs(fd - lp.grad_rho(p))) < 1e-7
    lap = sum((lp.rho(p + 1e-4 * e) - 2 * lp.rho(p) + lp.rho(p - 1e-4 * e)) / 1e-8 for e in np.eye(3))
    assert np.max(np.abs(lap - lp.lap_rho(p))) < 1e-4


def test_fd_eikonal_order_two():
    r = [eikonal_residual(build_domain({**BOX, "n": n}), LogPhase(reference_point=(0, 0, 2))) for n in (9, 17, 33)]
    orders = np.log2(np.array(r[:-1]) / np.array(r[1:]))
    assert np.all(np.abs(orders - 2) <= 0.5), orders


def test_psi_vanishes_on_ray():
    lp = LogPhase((0.1, -0.3, 0.2), (1.0, 2.0, 0.5))
    t = np.array([0.1, 1.0, 7.5])
    pts = lp.x0 + t[:, None] * lp.omega
    assert np.max(np.abs(lp.psi(pts))) < 1e-7
    assert np.allclose(lp.phi(pts), np.log(t))


def test_build_phase_rejects_cut_locus():
    g = build_domain(BOX)
    with pytest.raises(DomainError):
        build_phase(g, (0, 0, 0), (0, 0, 1))


def test_convexify_definitions():
    ph = build_phase(build_domain(BOX))
    pts = ph.points
    ratios = []
    for k in (2, 4, 8, 16):
        w = convexify(ph, 2.0**-k, 0.05, 20.0, require_log_bound=False)
        ratios.append(w.convexity)
        assert np.isclose(w.epsilon, epsilon_of(w.h, 0.05, 20.0))
        ex = (w.phi_tilde(pts) - w.logphase.phi(pts)) / w.h
        want = 20.0 * abs(0.05 * np.log(w.h)) * w.logphase.phi(pts) ** 2 / 2
        assert np.max(np.abs(ex - want)) < 1e-12 * max(1.0, want.max())
        assert np.isclose(w.weight_constant, 20.0 * w.sup_phi2 / 2)
        assert w.bound_holds(pts)
    assert np.all(np.diff(ratios) < 0)


def test_convexify_admissibility():
    ph = build_phase(build_domain(BOX))
    with pytest.raises(AdmissibilityError):
        convexify(ph, 0.25, 0.05, 20.0)  # |log h^alpha| < 1
    with pytest.raises(AdmissibilityError):
        convexify(ph, 0.9, 0.5, 1e3, require_log_bound=False)
    with pytest.raises(AdmissibilityError):
        convexify(ph, 0.1, 1.5)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(1.0, 50.0), st.floats(1.0, 4.0))
def test_admissible_range_monotone_in_C0(alpha, C0, factor):
    # raising C0 can only shrink the admissible range
    assert admissible_h_max(1.0, alpha, C0 * factor) <= admissible_h_max(1.0, alpha, C0)
