"""Sampling: direct mixture draws and Euler-Maruyama reverse SDE.

With zero noising drift the reverse SDE in denoising time ``t`` is

    dX = beta^2 score(X, T - t) dt + beta dW,

integrated from ``t = 0`` (noise time ``s = T``) to ``t = T - eps_stop``.

Trajectories are processed in fixed blocks of ``BLOCK`` rows. Each block gets
its own random stream keyed by ``(seed, block index)``, so results do not
depend on how many worker threads run (``WPO_SCORE_THREADS``).
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .rng import stream

BLOCK = 4096


class SamplerAbort(RuntimeError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite state in reverse SDE at step {step}")


@dataclass
class SdeConfig:
    n_steps: int = 1000
    eps_stop: float = 1e-3
    seed: int = 0

    def check(self, horizon):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not 0.0 <= self.eps_stop < horizon:
            raise ValueError(f"eps_stop must lie in [0, {horizon}), got {self.eps_stop}")


def n_threads():
    try:
        n = int(os.environ.get("WPO_SCORE_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _blocks(n):
    return [(b, i, min(i + BLOCK, n)) for b, i in enumerate(range(0, n, BLOCK))]


def _run_blocks(n, fn):
    blocks = _blocks(n)
    workers = min(n_threads(), len(blocks))
    if workers <= 1:
        return [fn(*blk) for blk in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda blk: fn(*blk), blocks))


def _mixture_draws(centers, cov_factors, n, seed, purpose_index):
    """``Z_i + C_i xi`` with ``i`` uniform and ``C_i C_i^T`` the component covariance."""
    N, d = centers.shape

    def block(b, lo, hi):
        rng = stream(seed, "sampling", purpose_index, b)
        idx = rng.integers(0, N, hi - lo)
        xi = rng.standard_normal((hi - lo, d))
        return centers[idx] + np.einsum("nij,nj->ni", cov_factors[idx], xi)

    parts = _run_blocks(n, block)
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, d))


def sample_direct(model, n, seed, s=0.0):
    """Draws from the mixture at noise time ``s`` (default: terminal), no SDE needed."""
    model.check_fresh()
    if s < 0:
        raise ValueError(f"noise time must be >= 0, got {s}")
    cov = model.covariances
    if s > 0:
        cov = cov + model.beta**2 * s * np.eye(model.dim)
    return _mixture_draws(model.centers, np.linalg.cholesky(cov), n, seed, 0)


def init_from_prior(field, n, seed, reference=None):
    """Initial states for the reverse SDE at noise time ``s = T``.

    For a kernel model these are exact draws of the mixture evolved to ``T``.
    Other fields get ``N(mean, Cov + beta^2 T I)`` from the moments of
    ``reference`` (the training set); that Gaussian is only approximate.
    """
    beta, T = field.beta, field.horizon
    if hasattr(field, "covariances"):
        field.check_fresh()
        d = field.dim
        cov_factors = np.linalg.cholesky(field.covariances + beta**2 * T * np.eye(d))
        return _mixture_draws(field.centers, cov_factors, n, seed, 1)
    if reference is None:
        reference = getattr(field, "trainset", None)
    if reference is None:
        raise ValueError("a reference sample is needed to moment-match the prior")
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    d = reference.shape[1]
    mean = reference.mean(axis=0)
    cov = np.atleast_2d(np.cov(reference, rowvar=False)) if len(reference) > 1 else np.zeros((d, d))
    chol = np.linalg.cholesky(cov + beta**2 * T * np.eye(d))

    def block(b, lo, hi):
        rng = stream(seed, "sampling", 1, b)
        return mean + rng.standard_normal((hi - lo, d)) @ chol.T

    parts = _run_blocks(n, block)
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, d))


def sample_reverse_sde(field, init, cfg):
    """Left-endpoint Euler-Maruyama from ``s = T`` down to ``s = eps_stop``."""
    T, beta = field.horizon, field.beta
    cfg.check(T)
    init = np.atleast_2d(np.asarray(init, dtype=float))
    dt = (T - cfg.eps_stop) / cfg.n_steps
    sqdt = beta * math.sqrt(dt)

    def block(b, lo, hi):
        rng = stream(cfg.seed, "sampling", 2, b)
        x = init[lo:hi].copy()
        for k in range(cfg.n_steps):
            s = T - k * dt
            x += beta**2 * dt * field.evaluate(x, s) + sqdt * rng.standard_normal(x.shape)
            if not np.all(np.isfinite(x)):
                raise SamplerAbort(k)
        return x

    if len(init) == 0:
        return init.copy()
    return np.concatenate(_run_blocks(len(init), block), axis=0)
