"""The kernel score model: a Gaussian mixture with learned local precisions.

At noise time ``s`` (``s = T - t`` in denoising time) each component keeps its
center and carries the precision

    Gamma_s(Z_i) = (Gamma(Z_i)^-1 + beta^2 s I)^-1,

which is exactly the heat flow ``d eta / ds = (beta^2 / 2) Laplace(eta)``
applied to the mixture. Densities use the normalized Gaussian convention:
component log-weight ``y_i = -1/2 r^T Gamma r + 1/2 log det Gamma
- d/2 log 2 pi - log N`` with ``r = x - Z_i``.

``score`` is ``grad_x log eta``; the reverse SDE drift is ``beta^2 * score``.
All functions accept a single point ``(d,)`` or a batch ``(m, d)``.
"""

import math

import numpy as np

from .core_math import (
    LOG_2PI,
    cholesky,
    cholesky_to_precision,
    log_sum_exp,
    softmax,
    tri_inverse,
)
from .precision import provider_from_dict

SCHEMA_VERSION = 1
_CHUNK_FLOATS = 1 << 21


class StaleCacheError(RuntimeError):
    """The provider changed since the last :meth:`KernelModel.refresh`."""


def evolve_precision(gamma, beta, s):
    """``(Gamma^-1 + beta^2 s I)^-1`` through Cholesky factors; batched.

    Returns ``gamma`` itself (copied) at ``s = 0``.
    """
    if s < 0:
        raise ValueError(f"noise time must be >= 0, got {s}")
    gamma = np.asarray(gamma, dtype=float)
    if s == 0:
        cholesky(gamma)
        return gamma.copy()
    gs, _ = _evolve_from_factor(cholesky(gamma), beta, s)
    return gs


def _evolve_from_factor(L, beta, s):
    # covariance Sigma = L^-T L^-1, then factor Sigma + beta^2 s I
    Linv = tri_inverse(L)
    sigma = np.swapaxes(Linv, -1, -2) @ Linv
    d = L.shape[-1]
    C = cholesky(sigma + (beta**2 * s) * np.eye(d))
    Cinv = tri_inverse(C)
    gs = np.swapaxes(Cinv, -1, -2) @ Cinv
    gs = 0.5 * (gs + np.swapaxes(gs, -1, -2))
    logdet = -2.0 * np.sum(np.log(np.diagonal(C, axis1=-2, axis2=-1)), axis=-1)
    return gs, logdet


class KernelModel:
    """Kernel centers + precision provider + diffusion scale and horizon.

    Precisions at the centers are cached; call :meth:`refresh` after every
    parameter update. Evaluating with a stale cache raises
    :class:`StaleCacheError`.
    """

    def __init__(self, centers, provider, beta=1.0, horizon=1.0):
        self.centers = np.ascontiguousarray(np.asarray(centers, dtype=float))
        if self.centers.ndim != 2 or len(self.centers) < 1:
            raise ValueError("centers must be a non-empty (N, d) array")
        if beta <= 0 or horizon <= 0:
            raise ValueError("beta and horizon must be positive")
        self.provider = provider
        self.beta = float(beta)
        self.horizon = float(horizon)
        self.refresh()

    @property
    def dim(self):
        return self.centers.shape[1]

    @property
    def n_centers(self):
        return self.centers.shape[0]

    def refresh(self):
        L = self.provider.factors(self.centers)
        self.factors = L
        self.precisions, self.logdets = cholesky_to_precision(L)
        Linv = tri_inverse(L)
        self.covariances = np.swapaxes(Linv, -1, -2) @ Linv
        self._snapshot = [p.copy() for p in self.provider.params]
        self._evolved_cache = {}

    def check_fresh(self):
        params = self.provider.params
        if len(params) != len(self._snapshot) or not all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(params, self._snapshot)
        ):
            raise StaleCacheError("provider parameters changed; call refresh() first")

    def evolved(self, s):
        """``(Gamma_s, log det Gamma_s)`` for all centers at noise time ``s``."""
        self.check_fresh()
        if s < 0:
            raise ValueError(f"noise time must be >= 0, got {s}")
        if s == 0:
            return self.precisions, self.logdets
        hit = self._evolved_cache.get(s)
        if hit is None:
            hit = self._evolve(s)
            if len(self._evolved_cache) > 8:
                self._evolved_cache.clear()
            self._evolved_cache[s] = hit
        return hit

    def _evolve(self, s):
        return _evolve_from_factor(self.factors, self.beta, s)

    # -- pointwise quantities -------------------------------------------------
    def _pieces(self, X, s):
        """Log-weights ``y (m, N)`` and ``Gamma_s r`` ``(m, N, d)``."""
        gammas, logdets = self.evolved(s)
        r = X[:, None, :] - self.centers[None, :, :]
        gr = np.matmul(gammas, r.transpose(1, 2, 0)).transpose(2, 0, 1)
        quad = np.sum(r * gr, axis=2)
        const = 0.5 * self.dim * LOG_2PI + math.log(self.n_centers)
        y = -0.5 * quad + 0.5 * logdets[None, :] - const
        return y, gr, gammas

    def _batched(self, x, fn):
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got {X.shape}")
        step = max(1, _CHUNK_FLOATS // (self.n_centers * self.dim))
        parts = [fn(X[i : i + step]) for i in range(0, len(X), step)]
        out = np.concatenate(parts, axis=0) if parts else fn(X[:0])
        return out[0] if single else out

    def log_weights(self, x, s=0.0):
        return self._batched(x, lambda X: self._pieces(X, s)[0])

    def softmax_weights(self, x, s=0.0):
        return self._batched(x, lambda X: softmax(self._pieces(X, s)[0], axis=1))

    def log_density(self, x, s=0.0):
        def fn(X):
            y = self._pieces(X, s)[0]
            return log_sum_exp(y, axis=1)

        return self._batched(x, fn)

    def score(self, x, s=0.0):
        def fn(X):
            y, gr, _ = self._pieces(X, s)
            w = softmax(y, axis=1)
            return -np.einsum("mn,mni->mi", w, gr)

        return self._batched(x, fn)

    def laplacian_ratio(self, x, s=0.0):
        """``Laplace(eta) / eta`` in closed form."""

        def fn(X):
            y, gr, gammas = self._pieces(X, s)
            w = softmax(y, axis=1)
            traces = np.trace(gammas, axis1=1, axis2=2)
            a = np.sum(gr * gr, axis=2) - traces[None, :]
            return np.sum(w * a, axis=1)

        return self._batched(x, fn)

    def score_and_laplacian(self, x, s=0.0):
        def fn(X):
            y, gr, gammas = self._pieces(X, s)
            w = softmax(y, axis=1)
            traces = np.trace(gammas, axis1=1, axis2=2)
            a = np.sum(gr * gr, axis=2) - traces[None, :]
            return np.column_stack([-np.einsum("mn,mni->mi", w, gr), np.sum(w * a, axis=1)])

        out = self._batched(x, fn)
        return out[..., :-1], out[..., -1]

    # ScoreField interface
    def evaluate(self, x, s):
        return self.score(x, s)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "d": self.dim,
            "beta": self.beta,
            "horizon": self.horizon,
            "centers": self.centers.tolist(),
            "provider": self.provider.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema_version {doc.get('schema_version')!r}")
        centers = np.asarray(doc["centers"], dtype=float).reshape(-1, int(doc["d"]))
        provider = provider_from_dict(doc["provider"], centers)
        return cls(centers, provider, beta=doc["beta"], horizon=doc["horizon"])


def log_density(model, x, s=0.0):
    return model.log_density(x, s)


def score(model, x, s=0.0):
    return model.score(x, s)


def laplacian_ratio(model, x, s=0.0):
    return model.laplacian_ratio(x, s)


def potential_U(model, x, t):
    """``U(x, t) = -beta^2 log eta(x, T - t)`` for denoising time ``t`` in [0, T]."""
    if not 0.0 <= t <= model.horizon:
        raise ValueError(f"denoising time must lie in [0, {model.horizon}], got {t}")
    s = max(model.horizon - t, 0.0)
    return -(model.beta**2) * model.log_density(x, s)


def hjb_residual(model, x, t, fd_step, return_dt=False):
    """``-dU/dt + |grad U|^2 / 2 - (beta^2 / 2) Laplace(U)``.

    The time derivative is a central difference with step ``fd_step``; the
    spatial terms are closed form. Zero up to O(fd_step^2) for a model whose
    precisions follow :func:`evolve_precision`.
    """
    if fd_step <= 0 or t - fd_step < 0 or t + fd_step > model.horizon:
        raise ValueError("need fd_step > 0 with t +- fd_step inside [0, T]")
    b2 = model.beta**2
    dU_dt = (potential_U(model, x, t + fd_step) - potential_U(model, x, t - fd_step)) / (2 * fd_step)
    S, R = model.score_and_laplacian(x, model.horizon - t)
    sq = np.sum(S * S, axis=-1)
    grad_sq = b2 * b2 * sq
    lap_U = -b2 * (R - sq)
    res = -dU_dt + 0.5 * grad_sq - 0.5 * b2 * lap_U
    return (res, dU_dt) if return_dt else res


class MistimedKernelModel(KernelModel):
    """Negative control: precisions diffuse at ``rate`` times the heat rate.

    Its potential does not solve the HJB equation for ``rate != 1``.
    """

    def __init__(self, centers, provider, beta=1.0, horizon=1.0, rate=2.0):
        self.rate = rate
        super().__init__(centers, provider, beta, horizon)

    def _evolve(self, s):
        return _evolve_from_factor(self.factors, self.beta, self.rate * s)
