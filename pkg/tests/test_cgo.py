import numpy as np
import pytest

from diracip import clifford as cl
from diracip.cauchy import HolomorphicAmplitude
from diracip.cgo import (apply_schrodinger, apply_schrodinger_factored, build_ansatz, get_variant, residual_scan,
                         transport_apply, truncate)
from diracip.coefficients import Coefficients
from diracip.geometry import LogPhase, build_domain
from diracip.spectral import CylinderGrid

HS = [2.0**-k for k in range(2, 7)]


@pytest.fixture(scope="module")
def cyl():
    g = build_domain({"n": 9})
    return CylinderGrid.covering(LogPhase(reference_point=g.center), g, n=13)


@pytest.fixture(scope="module")
def base():
    return Coefficients.build(A=("0.3*sin(x2)", "0.2*x1*x3", "0.1*cos(x1+x3)"), q_plus="1+0.5*x1*x2",
                              q_minus="2+0.3*x3")


def test_free_leading_term(cyl):
    ans = build_ansatz("minus_rho", cyl, Coefficients.build(), order=0)
    sc = cyl.coords
    want = (cyl.r**-0.5 / sc.z)[..., None, None] * cl.p_dirac(sc.zeta)
    assert np.max(np.abs(ans.C[0] - want)) < 1e-13
    assert np.max(np.abs(cl.p_dirac(ans.grad_rho) @ ans.C[0])) < 1e-13


def test_plus_variant_sign(cyl, base):
    amp = HolomorphicAmplitude(num=(1.0, 0.5))
    ans = build_ansatz("plus_rho", cyl, base, amplitude=amp, order=1)
    sc = cyl.coords
    a = amp.values_zt(sc.z, sc.theta)
    want = -(cyl.r**-0.5 * np.exp(1j * ans.phi_t) * a / sc.z)[..., None, None] * cl.p_dirac(sc.zeta)
    assert np.max(np.abs(ans.C[0] - want)) < 1e-12 * np.abs(want).max()


def test_conjugate_variant_leading_term(cyl, base):
    amp = HolomorphicAmplitude(num=(1.0, 0.5))
    ans = build_ansatz("minus_rhobar", cyl, base, amplitude=amp, order=1)
    sc = cyl.coords
    abar = np.conj(amp.values_zt(sc.z, sc.theta))
    want = (cyl.r**-0.5 * np.exp(1j * ans.phi_t) * abar / np.conj(sc.z))[..., None, None] \
        * cl.p_dirac(np.conj(sc.zeta))
    assert np.max(np.abs(ans.C[0] - want)) < 1e-12 * np.abs(want).max()


@pytest.mark.parametrize("variant", ["minus_rho", "plus_rho", "minus_rhobar"])
def test_nilpotent_and_transport(cyl, base, variant):
    ans = build_ansatz(variant, cyl, base, order=3)
    P = cl.p_dirac(ans.grad_rho)
    m = cyl.mask
    assert np.max(np.abs((P @ ans.C[0])[m])) < 1e-12
    # the zeroth internal amplitude is annihilated by the transport operator
    M = transport_apply(cyl, variant, ans.Ct[0], ans.sample)
    assert np.max(np.abs(M[m])) < 1e-4 * np.abs(ans.Ct[0][m]).max()  # spectral error at 13 nodes


def test_internal_amplitudes_do_not_depend_on_h(cyl, base):
    a1 = build_ansatz("minus_rho", cyl, base, order=3, h=0.25)
    a2 = build_ansatz("minus_rho", cyl, base, order=3, h=2.0**-6)
    for x, y in zip(a1.Ct + a1.C, a2.Ct + a2.C):
        assert np.array_equal(x, y)
    assert len(a1.sup_norms()) == 3 and all(np.isfinite(a1.sup_norms()))


def test_residual_slopes(cyl, base):
    rows, slopes, mono = residual_scan(cyl, base, HS)
    assert len(rows) == 4 * len(HS)
    for m in range(4):
        assert abs(slopes[("minus_rho", m)] - m) < 0.1
    assert mono["minus_rho"]


def test_truncate_matches_fresh_build(cyl, base):
    full = build_ansatz("minus_rho", cyl, base, order=3)
    fresh = build_ansatz("minus_rho", cyl, base, order=2)
    t = truncate(full, 2)
    for x, y in zip(t.C, fresh.C):
        assert np.allclose(x, y, rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        truncate(fresh, 3)


def test_schrodinger_monomial_oracles(cyl):
    zero = Coefficients.build()
    eye = np.broadcast_to(cl.I4, cyl.shape + (4, 4)).copy()
    assert np.max(np.abs(apply_schrodinger(cyl, 3.0 * eye, zero))) < 1e-10
    # D = -i grad, so the free square is -Lap: x1^2 -> -2
    C = cyl.points[..., 0][..., None, None] ** 2 * eye
    assert np.max(np.abs((apply_schrodinger(cyl, C, zero) + 2 * cl.I4)[cyl.mask])) < 1e-10
    # q+ = x3: the upper-right block is -sigma.D q+ = i sigma3
    H = apply_schrodinger(cyl, eye, Coefficients.build(q_plus="x3"))
    assert np.max(np.abs((H[..., :2, 2:] - 1j * cl.SIGMA[2])[cyl.mask])) < 1e-10
    assert np.max(np.abs(H[..., :2, :2][cyl.mask])) < 1e-10


def test_schrodinger_expanded_matches_factored(cyl, base):
    Ct = build_ansatz("minus_rho", cyl, base, order=1).Ct[0]
    H1 = apply_schrodinger(cyl, Ct, base)
    H2 = apply_schrodinger_factored(cyl, Ct, base)
    m = cyl.mask
    assert np.max(np.abs((H1 - H2)[m])) < 1e-5 * np.abs(H1[m]).max()


def test_unknown_variant():
    with pytest.raises(ValueError):
        get_variant("rho")
