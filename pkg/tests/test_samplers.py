import numpy as np
import pytest

from conftest import standard_gaussian_model
from wpo_score.baselines import EmpiricalScore
from wpo_score.checks import random_model
from wpo_score.samplers import (
    SamplerAbort,
    SdeConfig,
    init_from_prior,
    sample_direct,
    sample_reverse_sde,
)


class GaussianField:
    """Exact score of ``N(0, I)`` noised by Brownian motion."""

    def __init__(self, d=2, beta=1.0, horizon=1.0):
        self.dim, self.beta, self.horizon = d, beta, horizon

    def evaluate(self, x, s):
        return -x / (1.0 + self.beta**2 * s)


class BlowUpField(GaussianField):
    def evaluate(self, x, s):
        return np.full_like(x, np.inf)


def test_direct_moments():
    n = 100_000
    X = sample_direct(standard_gaussian_model(), n, 0)
    assert X.shape == (n, 2)
    assert np.all(np.abs(X.mean(axis=0)) < 4 / np.sqrt(n))
    assert np.max(np.abs(np.cov(X, rowvar=False) - np.eye(2))) < 0.05


def test_direct_determinism_and_empty(model2d):
    assert np.array_equal(sample_direct(model2d, 500, 3), sample_direct(model2d, 500, 3))
    assert not np.array_equal(sample_direct(model2d, 500, 3), sample_direct(model2d, 500, 4))
    assert sample_direct(model2d, 0, 0).shape == (0, 2)


def test_direct_at_noise_time():
    m = standard_gaussian_model(beta=0.5)
    X = sample_direct(m, 100_000, 4, s=2.0)
    assert np.max(np.abs(np.cov(X, rowvar=False) - 1.5 * np.eye(2))) < 0.05
    assert np.array_equal(sample_direct(m, 10, 4, s=0.0), sample_direct(m, 10, 4))
    with pytest.raises(ValueError):
        sample_direct(m, 10, 4, s=-1.0)


def test_prior_of_kernel_model():
    X = init_from_prior(standard_gaussian_model(), 100_000, 1)
    assert np.max(np.abs(X.var(axis=0) - 2.0)) < 0.05
    assert np.array_equal(X, init_from_prior(standard_gaussian_model(), 100_000, 1))


def test_prior_large_horizon_is_noise_dominated(rng):
    ref = rng.normal(size=(5000, 2)) * [1.0, 0.2] + [3.0, -1.0]
    field = GaussianField(horizon=400.0)
    X = init_from_prior(field, 50_000, 2, reference=ref)
    cov = np.cov(X, rowvar=False) / 400.0
    assert np.max(np.abs(cov - np.eye(2))) < 0.02


def test_prior_needs_reference():
    with pytest.raises(ValueError):
        init_from_prior(GaussianField(), 10, 0)


def _sde_cov(n_steps, n=100_000):
    field = GaussianField()
    init = np.random.default_rng(7).normal(0.0, np.sqrt(2.0), (n, 2))
    X = sample_reverse_sde(field, init, SdeConfig(n_steps, 0.0, 11))
    return np.cov(X, rowvar=False)


def test_sde_gaussian_and_step_refinement():
    c500 = _sde_cov(500)
    assert np.max(np.abs(c500 - np.eye(2))) < 0.05
    c2000 = _sde_cov(2000, n=50_000)
    assert np.max(np.abs(c2000 - _sde_cov(500, n=50_000))) < 0.02


def test_sde_single_step_finite():
    init = np.random.default_rng(0).normal(size=(100, 2))
    X = sample_reverse_sde(GaussianField(), init, SdeConfig(1, 0.0, 0))
    assert np.all(np.isfinite(X))


def test_sde_abort_and_config_errors():
    with pytest.raises(SamplerAbort) as exc:
        sample_reverse_sde(BlowUpField(), np.zeros((5, 2)), SdeConfig(10, 0.0, 0))
    assert exc.value.step == 0
    for cfg in (SdeConfig(0, 0.0), SdeConfig(10, 1.0), SdeConfig(10, -0.1)):
        with pytest.raises(ValueError):
            sample_reverse_sde(GaussianField(), np.zeros((5, 2)), cfg)


def test_sde_empty_and_determinism(model2d):
    cfg = SdeConfig(20, 1e-3, 5)
    assert sample_reverse_sde(model2d, np.zeros((0, 2)), cfg).shape == (0, 2)
    init = init_from_prior(model2d, 300, 5)
    assert np.array_equal(sample_reverse_sde(model2d, init, cfg), sample_reverse_sde(model2d, init, cfg))


def test_thread_count_invariance(monkeypatch, rng):
    model = random_model(rng, 2, 4)
    n = 9000  # three blocks
    runs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("WPO_SCORE_THREADS", threads)
        init = init_from_prior(model, n, 2)
        runs.append((sample_direct(model, n, 2), sample_reverse_sde(model, init, SdeConfig(5, 1e-3, 2))))
    assert np.array_equal(runs[0][0], runs[1][0])
    assert np.array_equal(runs[0][1], runs[1][1])


def test_empirical_early_stop_moments(rng):
    # s = eps with a single training point: N(p, beta^2 eps I) exactly
    p = np.array([[1.0, -2.0]])
    es = EmpiricalScore(p)
    init = init_from_prior(es, 50_000, 3)
    X = sample_reverse_sde(es, init, SdeConfig(200, 0.1, 3))
    n = len(X)
    assert np.all(np.abs(X.mean(axis=0) - p[0]) < 5 * np.sqrt(0.1 / n))
    assert np.max(np.abs(np.cov(X, rowvar=False) - 0.1 * np.eye(2))) < 0.01
