"""Small dense linear algebra, the heat kernel and a stable log-sum-exp.

Everything here works on float64 numpy arrays. Batched variants accept a
leading stack axis, e.g. ``(N, d, d)`` for one precision matrix per center.
"""

import math

import numpy as np


class NotSPDError(np.linalg.LinAlgError):
    """Raised when a Cholesky factorization fails."""


LOG_2PI = math.log(2.0 * math.pi)


def heat_kernel(gamma, t, y, y2):
    """Green's function of ``u_t = gamma * Laplace(u)``.

    ``G(y, y2) = (4 pi gamma t)^(-d/2) exp(-|y - y2|^2 / (4 gamma t))``.
    Broadcasts over leading axes of ``y`` and ``y2``; the last axis is the
    spatial dimension.
    """
    if gamma <= 0 or t <= 0:
        raise ValueError(f"heat_kernel needs gamma > 0 and t > 0, got {gamma}, {t}")
    y = np.asarray(y, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if y.shape[-1:] != y2.shape[-1:]:
        raise ValueError(f"dimension mismatch: {y.shape} vs {y2.shape}")
    d = y.shape[-1] if y.ndim else 1
    var2 = 4.0 * gamma * t
    sq = np.sum((y - y2) ** 2, axis=-1)
    return np.exp(-sq / var2) / (math.pi * var2) ** (d / 2)


def log_sum_exp(v, axis=None):
    """``log(sum(exp(v)))`` with a max shift.

    Returns exactly ``-inf`` when every entry is ``-inf``.
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty array")
    m = np.max(v, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - m_safe), axis=axis, keepdims=True)) + m_safe
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def softmax(v, axis=-1):
    v = np.asarray(v, dtype=float)
    m = np.max(v, axis=axis, keepdims=True)
    e = np.exp(v - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def tril_size(d):
    return d * (d + 1) // 2


def tril_dim(p):
    """Inverse of :func:`tril_size`."""
    d = int(round((math.sqrt(8 * p + 1) - 1) / 2))
    if tril_size(d) != p:
        raise ValueError(f"{p} is not a triangular number")
    return d


def tril_indices(d):
    # row-major packing: (0,0), (1,0), (1,1), (2,0), ...
    return np.tril_indices(d)


def unpack_tril(packed, d=None):
    """Packed row-major lower triangle(s) ``(..., d(d+1)/2)`` to ``(..., d, d)``."""
    packed = np.asarray(packed, dtype=float)
    if d is None:
        d = tril_dim(packed.shape[-1])
    out = np.zeros(packed.shape[:-1] + (d, d))
    rows, cols = tril_indices(d)
    out[..., rows, cols] = packed
    return out


def pack_tril(L):
    L = np.asarray(L, dtype=float)
    rows, cols = tril_indices(L.shape[-1])
    return L[..., rows, cols]


def cholesky(A):
    """Lower Cholesky factor, batched; raises :class:`NotSPDError`."""
    try:
        return np.linalg.cholesky(np.asarray(A, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(f"matrix is not symmetric positive definite: {exc}") from None


def cholesky_to_precision(L):
    """Return ``(Gamma, logdet)`` with ``Gamma = L L^T``.

    ``L`` is either a dense lower-triangular ``(..., d, d)`` array or a packed
    ``(..., d(d+1)/2)`` vector; a 1-D input is treated as packed.
    ``logdet = 2 * sum(log diag L)``.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim == 1:
        L = unpack_tril(L)
    diag = np.diagonal(L, axis1=-2, axis2=-1)
    if np.any(diag <= 0) or not np.all(np.isfinite(L)):
        raise ValueError("Cholesky factor needs a finite, strictly positive diagonal")
    L = np.tril(L)
    gamma = L @ np.swapaxes(L, -1, -2)
    logdet = 2.0 * np.sum(np.log(diag), axis=-1)
    return gamma, logdet


def tri_inverse(L):
    """Inverse of a (batched) lower-triangular matrix by substitution."""
    L = np.asarray(L, dtype=float)
    eye = np.broadcast_to(np.eye(L.shape[-1]), L.shape)
    return np.tril(np.linalg.solve(L, eye))


def spd_inverse(gamma):
    """Inverse of an SPD matrix (batched) through its Cholesky factor."""
    Linv = tri_inverse(cholesky(gamma))
    inv = np.swapaxes(Linv, -1, -2) @ Linv
    return 0.5 * (inv + np.swapaxes(inv, -1, -2))


def spd_solve(gamma, v):
    """Solve ``gamma x = v`` for SPD ``gamma`` (single matrix)."""
    from scipy.linalg import cho_solve

    L = cholesky(gamma)
    return cho_solve((L, True), np.asarray(v, dtype=float))


def spd_logdet(gamma):
    L = cholesky(gamma)
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


def softplus(u):
    u = np.asarray(u, dtype=float)
    return np.logaddexp(0.0, u)


def softplus_inverse(y):
    """Inverse of softplus for ``y > 0``."""
    y = np.asarray(y, dtype=float)
    # log(exp(y) - 1) = y + log(1 - exp(-y))
    return y + np.log(-np.expm1(-y))


def sigmoid(u):
    u = np.asarray(u, dtype=float)
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def trapezoid_weights(grid):
    """Trapezoid quadrature weights for a 1-D sorted grid."""
    grid = np.asarray(grid, dtype=float)
    w = np.zeros_like(grid)
    h = np.diff(grid)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w
