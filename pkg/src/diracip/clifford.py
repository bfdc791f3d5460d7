"""Pauli and Dirac matrix algebra.

All functions broadcast over leading axes: a vector argument of shape
``(..., 3)`` produces matrices of shape ``(..., 2, 2)`` or ``(..., 4, 4)``.
Dot products are the complex *bilinear* form ``sum(a_k * b_k)``; nothing here
conjugates.
"""

from __future__ import annotations

import numpy as np

SIGMA = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)
I2 = np.eye(2, dtype=complex)
I4 = np.eye(4, dtype=complex)


def _vec(a):
    a = np.asarray(a, dtype=complex)
    if a.shape[-1] != 3:
        raise ValueError(f"expected trailing axis of length 3, got shape {a.shape}")
    return a


def bdot(a, b):
    """Bilinear dot product over the trailing axis."""
    return np.sum(_vec(a) * _vec(b), axis=-1)


def cross(a, b):
    return np.cross(_vec(a), _vec(b))


def sigma_dot(a):
    """Return ``a_1 sigma_1 + a_2 sigma_2 + a_3 sigma_3``."""
    return np.einsum("...k,kij->...ij", _vec(a), SIGMA)


def p_dirac(a):
    """Block matrix ``[[0, sigma.a], [sigma.a, 0]]``."""
    s = sigma_dot(a)
    out = np.zeros(s.shape[:-2] + (4, 4), dtype=complex)
    out[..., :2, 2:] = s
    out[..., 2:, :2] = s
    return out


def q_matrix(q_plus, q_minus):
    """``diag(q_plus I_2, q_minus I_2)``."""
    qp = np.asarray(q_plus, dtype=complex)
    qm = np.asarray(q_minus, dtype=complex)
    shape = np.broadcast(qp, qm).shape
    out = np.zeros(shape + (4, 4), dtype=complex)
    for k in range(2):
        out[..., k, k] = qp
        out[..., k + 2, k + 2] = qm
    return out


def q_flip(Q, atol=1e-12):
    """Swap the two diagonal blocks of a potential of the form ``q_matrix``.

    Raises ``ValueError`` if ``Q`` is not of that block-diagonal form.
    """
    Q = np.asarray(Q, dtype=complex)
    qp = Q[..., 0, 0]
    qm = Q[..., 2, 2]
    expected = q_matrix(qp, qm)
    scale = max(1.0, float(np.max(np.abs(Q), initial=0.0)))
    if not np.allclose(Q, expected, rtol=0.0, atol=atol * scale):
        raise ValueError("q_flip expects diag(q+ I2, q- I2)")
    return q_matrix(qm, qp)


def sigma_product_decompose(a, b):
    """Split ``(sigma.a)(sigma.b)`` as ``dot I_2 + i sigma.cross``.

    Returns ``(dot, cross)`` with ``dot = a.b`` and ``cross = a x b``.
    """
    return bdot(a, b), cross(a, b)


def upper_right(M):
    return M[..., :2, 2:]


def upper_left(M):
    return M[..., :2, :2]


def dagger(M):
    return np.conj(np.swapaxes(M, -1, -2))


def identity_residuals(a, b, q_plus, q_minus):
    """Max entrywise error of every algebraic identity for the given samples.

    Returns a dict keyed by identity name; used by the self-test command.
    """
    sa, sb = sigma_dot(a), sigma_dot(b)
    pa, pb = p_dirac(a), p_dirac(b)
    ab = bdot(a, b)[..., None, None]
    aa = bdot(a, a)[..., None, None]
    Q = q_matrix(q_plus, q_minus)
    QI = q_flip(Q)
    dot, cr = sigma_product_decompose(a, b)
    out = {
        "sigma_anticommutator": sa @ sb + sb @ sa - 2 * ab * I2,
        "sigma_square": sa @ sa - aa * I2,
        "dirac_anticommutator": pa @ pb + pb @ pa - 2 * ab * I4,
        "dirac_square": pa @ pa - aa * I4,
        "dirac_q_commutation": pa @ Q - QI @ pa,
        "sigma_product": sa @ sb - (dot[..., None, None] * I2 + 1j * sigma_dot(cr)),
    }
    return {k: float(np.max(np.abs(v))) for k, v in out.items()}
