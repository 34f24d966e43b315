"""A minimal reverse-mode tape over a fixed operation vocabulary.

Only parameter derivatives go through the tape. Spatial derivatives of the
kernel model (score, Laplacian) are closed-form and never taped.

Vocabulary: ``affine``, ``gelu``, ``decode_cholesky``, ``sum_squares``,
``weighted_sq_error`` and arbitrary composite nodes added with
:meth:`Tape.record` that supply their own vector-Jacobian product (the kernel
ISM loss is one of those).
"""

import math

import numpy as np
from scipy.special import erf

from .core_math import sigmoid, softplus, tril_indices, tril_dim

DIAG_FLOOR = 1e-6
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """Exact GeLU ``x * Phi(x)``."""
    x = np.asarray(x, dtype=float)
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


def decode_diag(raw):
    return softplus(raw) + DIAG_FLOOR


def decode_cholesky(raw, d=None):
    """Packed raw entries ``(..., d(d+1)/2)`` to lower factors ``(..., d, d)``.

    Off-diagonal slots are used as is; diagonal slots go through
    ``softplus(u) + 1e-6``.
    """
    raw = np.asarray(raw, dtype=float)
    if d is None:
        d = tril_dim(raw.shape[-1])
    rows, cols = tril_indices(d)
    vals = np.where(rows == cols, decode_diag(raw), raw)
    L = np.zeros(raw.shape[:-1] + (d, d))
    L[..., rows, cols] = vals
    return L


class Var:
    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad=False):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return np.shape(self.value)


class TapeError(RuntimeError):
    pass


class Tape:
    """Records a forward pass; :meth:`backward` replays it in reverse."""

    def __init__(self):
        self._nodes = []
        self.params = []

    def param(self, value):
        v = Var(np.asarray(value, dtype=float), requires_grad=True)
        self.params.append(v)
        return v

    def const(self, value):
        return Var(np.asarray(value, dtype=float))

    def record(self, value, parents, vjp):
        """Add a node. ``vjp(g)`` returns one cotangent (or None) per parent."""
        out = Var(value, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            self._nodes.append((out, parents, vjp))
        return out

    # -- vocabulary ---------------------------------------------------------
    def affine(self, x, W, b):
        xv, Wv, bv = x.value, W.value, b.value

        def vjp(g):
            return g @ Wv.T, xv.T @ g, g.sum(axis=0)

        return self.record(xv @ Wv + bv, (x, W, b), vjp)

    def gelu(self, x):
        xv = x.value
        cdf = 0.5 * (1.0 + erf(xv * _INV_SQRT2))

        def vjp(g):
            return (g * (cdf + xv * _INV_SQRT2PI * np.exp(-0.5 * xv * xv)),)

        return self.record(xv * cdf, (x,), vjp)

    def decode_cholesky(self, raw):
        rv = raw.value
        d = tril_dim(rv.shape[-1])
        rows, cols = tril_indices(d)
        diag = rows == cols

        def vjp(g):
            gr = g[..., rows, cols]
            return (np.where(diag, gr * sigmoid(rv), gr),)

        return self.record(decode_cholesky(rv, d), (raw,), vjp)

    def sum_squares(self, x):
        xv = x.value

        def vjp(g):
            return (2.0 * g * xv,)

        return self.record(np.sum(xv * xv), (x,), vjp)

    def weighted_sq_error(self, pred, target, weights):
        """``sum_b w_b |pred_b - target_b|^2``; target and weights are constants."""
        diff = pred.value - np.asarray(target, dtype=float)
        w = np.asarray(weights, dtype=float)

        def vjp(g):
            return (2.0 * g * w[:, None] * diff,)

        return self.record(float(np.sum(w * np.sum(diff * diff, axis=1))), (pred,), vjp)

    # -- reverse pass -------------------------------------------------------
    def backward(self, out, seed=1.0):
        """Gradients of ``seed * out`` for every registered parameter, in order."""
        if not self._nodes and not any(out is p for p in self.params):
            raise TapeError("backward() called before any forward pass was recorded")
        for p in self.params:
            p.grad = None
        for node, _, _ in self._nodes:
            node.grad = None
        out.grad = np.asarray(seed, dtype=float) * np.ones_like(out.value, dtype=float)
        for node, parents, vjp in reversed(self._nodes):
            if node.grad is None:
                continue
            for parent, g in zip(parents, vjp(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        return [np.zeros_like(p.value) if p.grad is None else p.grad for p in self.params]


def flatten(arrays):
    return np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.zeros(0)


def unflatten(vec, like):
    out, k = [], 0
    for a in like:
        out.append(np.asarray(vec[k : k + a.size], dtype=float).reshape(a.shape))
        k += a.size
    return out
