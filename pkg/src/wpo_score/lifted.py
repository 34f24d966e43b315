"""The kernel score at ``s = 0`` written as a shallow softmax network.

With the lift ``T(x) = [x (x) x ; x]`` (full Kronecker square, row-major) the
component log-weights are affine in ``T(x)``:

    y(x) = A T(x) + b,   A_i = [-1/2 vec(Gamma_i), (Gamma_i Z_i)^T],
    b_i = -1/2 Z_i^T Gamma_i Z_i + 1/2 log det Gamma_i - d/2 log 2 pi - log N,

and the score is ``sum_i softmax(y)_i * (-Gamma_i (x - Z_i))``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core_math import LOG_2PI, softmax


def lift(x):
    """``[x (x) x ; x]``; ``x_i x_j`` sits at index ``i * d + j``. Batched."""
    x = np.asarray(x, dtype=float)
    quad = (x[..., :, None] * x[..., None, :]).reshape(x.shape[:-1] + (-1,))
    return np.concatenate([quad, x], axis=-1)


@dataclass
class LiftedForm:
    A: np.ndarray  # (N, d^2 + d)
    b: np.ndarray  # (N,)
    centers: np.ndarray
    precisions: np.ndarray

    @property
    def dim(self):
        return self.centers.shape[1]

    def logits(self, x):
        return lift(x) @ self.A.T + self.b


def assemble(model):
    """Weights ``A, b`` of the lifted form of ``model`` at ``s = 0``."""
    model.check_fresh()
    Z, G = model.centers, model.precisions
    N, d = Z.shape
    gz = np.einsum("nij,nj->ni", G, Z)
    A = np.concatenate([-0.5 * G.reshape(N, d * d), gz], axis=1)
    b = -0.5 * np.sum(Z * gz, axis=1) + 0.5 * model.logdets - 0.5 * d * LOG_2PI - math.log(N)
    return LiftedForm(A, b, Z.copy(), G.copy())


def lifted_score(form, x):
    """``sum_i softmax(A T(x) + b)_i * (-Gamma_i (x - Z_i))``."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    w = softmax(form.logits(X), axis=1)
    r = X[:, None, :] - form.centers[None, :, :]
    grad_y = -np.einsum("nij,mnj->mni", form.precisions, r)
    out = np.einsum("mn,mni->mi", w, grad_y)
    return out[0] if single else out
