import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diracip import clifford as cl
from diracip.coefficients import Coefficients
from diracip.config import BUMP
from diracip.expr import as_scalar, gradient_field
from diracip.geometry import LogPhase, build_domain, front_face
from diracip.recovery import (GRID_MAGIC, PlaneFamily, identity_check, invert_plane_transform, pair_cgo,
                              read_grid, reduction_checks, scalar_plane_transform, slice_grid_for,
                              slice_qminus_transform, theta_forms, two_plane_transform, write_grid)
from diracip.spectral import CylinderGrid

CO = Coefficients.build(A=("0.3*sin(x2)", "0.2*x1*x3", "0.1*cos(x1+x3)"), q_plus="1+0.5*x1*x2", q_minus="2+0.3*x3")
LP = LogPhase()


@pytest.fixture(scope="module")
def dom():
    return build_domain({"n": 9})


@pytest.fixture(scope="module")
def fam(dom):
    return PlaneFamily.lattice((0, 0, 0), (1, 0, 0), dom, offsets=(-0.5, 0.5), depths=(0.0,), n_theta=6)


def test_grid_round_trip(tmp_path):
    a = np.arange(24.0).reshape(2, 3, 4) - 5.5
    p = tmp_path / "f.grid"
    write_grid(p, a, 0.25, (1.0, -2.0, 0.5))
    raw = p.read_bytes()
    assert raw[:8] == GRID_MAGIC and int.from_bytes(raw[8:12], "little") == 3
    assert len(raw) == 8 + 4 + 3 * 8 * 3 + a.size * 8
    b, sp, org = read_grid(p)
    assert np.array_equal(a, b) and np.array_equal(sp, [0.25] * 3) and np.array_equal(org, [1.0, -2.0, 0.5])


def test_grid_file_errors(tmp_path):
    with pytest.raises(TypeError):
        write_grid(tmp_path / "c.grid", np.ones(3, complex), 1.0, 0.0)
    bad = tmp_path / "bad.grid"
    bad.write_bytes(b"NOTAGRID" + bytes(20))
    with pytest.raises(ValueError):
        read_grid(bad)
    write_grid(bad, np.ones((4, 4)), 1.0, 0.0)
    bad.write_bytes(bad.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_grid(bad)


def test_lattice_shape_and_pole_rejection(dom, fam):
    assert len(fam) == 12 and fam.x0.shape == (12, 3)
    with pytest.raises(ValueError):
        PlaneFamily.lattice((0, 0, 0), (1, 0, 0), dom, offsets=(0.0,), depths=(2.0,))


def test_zero_field_transforms(dom, fam):
    zero = lambda p: np.zeros(p.shape[:-1] + (3,))
    assert np.array_equal(two_plane_transform(zero, fam, dom).values, np.zeros(len(fam)))
    assert np.array_equal(scalar_plane_transform("0", fam, dom).values, np.zeros(len(fam)))


def test_gradient_field_has_zero_transform(dom, fam):
    # a compactly supported potential integrates to zero along every plane
    G = gradient_field(as_scalar(BUMP))
    ref = np.abs(scalar_plane_transform(lambda p: np.linalg.norm(G(p), axis=-1), fam, dom).values).max()
    for xi in (None, (0.0, 1.0), (1.0, 0.0)):
        v = np.abs(two_plane_transform(G, fam, dom, xi=xi, n_s=48, n_t=48).values).max()
        # grad p extended by zero has a kink on the box faces, which caps the Gauss accuracy
        assert v < 1e-4 * ref


def test_plane_transform_quadrature_converged(dom, fam):
    f = "exp(-(x1**2+x2**2+(x3-2)**2)/0.01)"
    a = scalar_plane_transform(f, fam, dom).values
    b = scalar_plane_transform(f, fam, dom, n_s=48, n_t=48, panels=6).values
    assert np.max(np.abs(a - b)) < 1e-8 * np.abs(b).max()
    # the gaussian is negligible on the box faces, so planes through its centre see pi * 0.01
    centre = PlaneFamily(np.zeros((1, 3)), np.array([[1.0, 0, 0]]), np.array([np.pi / 2]))
    v = scalar_plane_transform(f, centre, dom).values[0]
    assert abs(v - np.pi * 0.01) < 1e-8


def test_inversion_rejects_small_family_and_unknown_kind(dom, fam):
    sg = slice_grid_for(dom, LP.frame, 8)
    prof = lambda y1: np.cos(np.pi * y1) ** 2 * (np.abs(y1) < 0.5)
    with pytest.raises(ValueError):
        invert_plane_transform(np.zeros(len(fam)), fam, dom, sg, prof)
    with pytest.raises(ValueError):
        invert_plane_transform(np.zeros(len(fam)), fam, dom, sg, prof, kind="tensor", oversampling=0)


def test_scalar_inversion_recovers_slice(dom):
    big = PlaneFamily.lattice((0, 0, 0), (1, 0, 0), dom, n_theta=12)
    sg = slice_grid_for(dom, LP.frame, 8)
    prof = lambda y1: np.where(np.abs(y1) < 0.5, np.cos(np.pi * y1) ** 2, 0.0)
    c = LP.frame.local(dom.center[None])[0]

    def f2(y2, y3):
        return np.clip(1 - ((y2 - c[1]) / 0.5) ** 2, 0, None) * np.clip(1 - ((y3 - c[2]) / 0.5) ** 2, 0, None)

    F = lambda p: (lambda y: prof(y[:, 0]) * f2(y[:, 1], y[:, 2]))(LP.frame.local(p))
    S = scalar_plane_transform(F, big, dom)
    inv = invert_plane_transform(S, big, dom, sg, prof)
    Y = sg.nodes
    truth = f2(Y[..., 0], Y[..., 1])
    assert np.linalg.norm(inv.field.real - truth) / np.linalg.norm(truth) < 0.2
    z = invert_plane_transform(np.zeros(len(big)), big, dom, sg, prof)
    assert np.array_equal(z.field, np.zeros_like(z.field))


def test_theta_free_slice_transform(dom):
    th = np.linspace(1.2, 1.9, 5)
    free = slice_qminus_transform("exp(-(x1**2+(sqrt(x2**2+x3**2)-2)**2)/0.05)", LP, dom, th)
    ctrl = slice_qminus_transform("exp(-(x1**2+x2**2+(x3-2)**2)/0.05)", LP, dom, th)
    assert np.max(np.abs(free.dtheta_values)) < 1e-10
    assert np.max(np.abs(ctrl.dtheta_values)) > 1e-3


def test_theta_forms_agree_for_compact_q(dom):
    fb, fd = theta_forms("exp(-(x1**2+x2**2+(x3-2)**2)/0.01)", LP, dom, "cos(theta)+2", n_theta=48)
    assert np.max(np.abs(fb - fd)) < 1e-6 * np.abs(fb).max()


def test_identity_same_potential(dom):
    P = dom.nodes.reshape(-1, 3)[dom.on_boundary.ravel()]
    f1 = np.stack([np.exp(P[:, 0] + 0.5j * P[:, 1]), np.cos(P[:, 2]) + 0j], -1)
    f2 = np.stack([P[:, 1] * P[:, 2] + 0j, np.exp(-0.5j * P[:, 0])], -1)
    r = identity_check(dom, CO, CO, f1, f2, front_face(dom, (0, 0, 0), 0.05))
    assert r.lhs == 0 and abs(r.rhs) <= 1e-10 and r.gap <= 1e-10
    assert r.gamma_mismatch <= 1e-10


def test_identity_rejects_unknown_solver(dom):
    with pytest.raises(ValueError):
        identity_check(dom, CO, CO, np.zeros((1, 2)), np.zeros((1, 2)), solver="spectral")


def test_reduction_identities():
    rng = np.random.default_rng(4)
    n = 200
    theta = rng.uniform(0, 2 * np.pi, n)
    zeta = np.stack([np.ones(n), 1j * np.cos(theta), 1j * np.sin(theta)], -1)
    A = rng.normal(size=(n, 3))
    b = rng.normal(size=(n, 3)) + 1j * rng.normal(size=(n, 3))
    c = lambda: rng.normal(size=n) + 1j * rng.normal(size=n)
    out = reduction_checks(zeta, A, b - A, (c(), c()), (c(), c()))
    assert out["annihilation"] < 1e-12 and out["anticommutator"] < 1e-12 and out["q_product"] < 1e-12


def test_pair_with_equal_potentials_vanishes(dom):
    cyl = CylinderGrid.covering(LogPhase(reference_point=dom.center), dom, n=9)
    pair = pair_cgo(cyl, CO, CO)
    assert np.array_equal(pair.potential_difference(), np.zeros(cyl.shape + (4, 4)))
    assert np.max(np.abs(pair.integral(0.1))) == 0
    assert np.max(np.abs(pair.magnetic_limit())) == 0
    assert pair.integrand(0.1).shape == cyl.shape + (4, 4)
    # the leading amplitudes are nilpotent along zeta
    P = cl.p_dirac(cyl.coords.zeta)
    assert np.max(np.abs((P @ pair.U1.C[0])[cyl.mask])) < 1e-12


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_plane_transform_is_linear(a, b):
    dom = build_domain({"n": 9})
    fam = PlaneFamily.lattice((0, 0, 0), (1, 0, 0), dom, offsets=(0.0,), depths=(0.0,), n_theta=3)
    F1 = lambda p: np.stack([p[:, 0], p[:, 1] * p[:, 2], np.cos(p[:, 0])], -1)
    F2 = lambda p: np.stack([np.sin(p[:, 2]), 0 * p[:, 0], p[:, 1] ** 2], -1)
    lam = a + 1j * b
    lhs = two_plane_transform(lambda p: lam * F1(p) + F2(p), fam, dom, n_s=8, n_t=8, panels=1).values
    rhs = lam * two_plane_transform(F1, fam, dom, n_s=8, n_t=8, panels=1).values \
        + two_plane_transform(F2, fam, dom, n_s=8, n_t=8, panels=1).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * (1 + abs(lam)) * max(1, np.abs(rhs).max())
