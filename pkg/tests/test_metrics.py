import math

import numpy as np
import pytest

from conftest import standard_gaussian_model
from wpo_score.checks import random_model
from wpo_score.core_math import trapezoid_weights
from wpo_score.kernel import KernelModel
from wpo_score.metrics import (
    MetricReport,
    ellipses,
    mmd2_unbiased,
    nll,
    nn_distance_stats,
    nn_distances,
    nn_median_ratio,
    write_ellipses_csv,
)
from wpo_score.precision import TableProvider, isotropic_raw
from wpo_score.rng import stream
from wpo_score.samplers import sample_direct


def test_mmd_degenerate_examples():
    z = np.zeros((2, 1))
    assert mmd2_unbiased(z, z, bandwidth=1.0) == 0.0
    assert mmd2_unbiased(z, z + 100.0, bandwidth=1.0) == pytest.approx(2.0, abs=1e-12)


def test_mmd_errors():
    with pytest.raises(ValueError):
        mmd2_unbiased(np.zeros((1, 2)), np.zeros((5, 2)))
    with pytest.raises(ValueError):
        mmd2_unbiased(np.zeros((3, 2)), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        mmd2_unbiased(np.zeros((3, 2)), np.ones((3, 2)), bandwidth="silverman")


def test_mmd_null_scale(rng):
    model = random_model(rng, 2, 6)
    X = sample_direct(model, 5000, 1)
    Y = sample_direct(model, 5000, 2)
    assert abs(mmd2_unbiased(X, Y)) < 5 / 5000


def test_mmd_symmetry_and_permutation(rng):
    X = rng.normal(size=(300, 2))
    Y = rng.normal(0.3, 1.0, (200, 2))
    a = mmd2_unbiased(X, Y, bandwidth=0.8)
    assert mmd2_unbiased(Y, X, bandwidth=0.8) == pytest.approx(a, abs=1e-14)
    Xp, Yp = X[rng.permutation(300)], Y[rng.permutation(200)]
    assert mmd2_unbiased(Xp, Yp, bandwidth=0.8) == pytest.approx(a, abs=1e-14)
    assert mmd2_unbiased(X, Y) == mmd2_unbiased(X, Y)


def test_mmd_detects_shift(rng):
    X = rng.normal(size=(500, 2))
    assert mmd2_unbiased(X, X + 1.0) > 0.1


def test_nn_examples(rng):
    d = nn_distances(np.array([[3.0, 4.0]]), np.zeros((1, 2)))
    assert d[0] == 5.0
    ref = rng.normal(size=(100, 3))
    med, q = nn_distance_stats(ref, ref)
    assert med == 0.0 and q[0.9] == 0.0
    S = rng.normal(size=(3000, 3))
    assert np.allclose(nn_distances(S, ref, "brute"), nn_distances(S, ref, "kdtree"), atol=1e-12)
    with pytest.raises(ValueError):
        nn_distances(np.zeros((0, 3)), ref)


def test_nn_ratio_flags_copies(rng):
    train_pts = rng.normal(size=(500, 2))
    held = rng.normal(size=(500, 2))
    assert nn_median_ratio(train_pts + 1e-3, held, train_pts) < 0.05
    assert 0.7 < nn_median_ratio(rng.normal(size=(500, 2)), held, train_pts) < 1.4


def test_nll_standard_gaussian():
    X = stream(5, "check", 60).standard_normal((100_000, 2))
    assert nll(standard_gaussian_model(), X) == pytest.approx(1 + math.log(2 * math.pi), abs=0.02)
    with pytest.raises(ValueError):
        nll(standard_gaussian_model(), np.zeros((0, 2)))


def test_nll_point_mass_far_away():
    c = np.zeros((1, 2))
    tiny = KernelModel(c, TableProvider(c, isotropic_raw(2, 1e6)[None, :]))
    assert nll(tiny, np.full((10, 2), 3.0)) > 1e6


def test_nll_matches_entropy_quadrature():
    rng = stream(2, "check", 61)
    model = random_model(rng, 1, 3)
    grid = np.linspace(-25.0, 25.0, 200_001)
    lp = model.log_density(grid[:, None])
    entropy = -float(np.sum(trapezoid_weights(grid) * np.exp(lp) * lp))
    X = sample_direct(model, 4_000_000, 8)
    assert nll(model, X) == pytest.approx(entropy, abs=1e-3)


def _diag_model(diag):
    # packed (L00, L10, L11); invert the softplus decode on the diagonal
    c = np.array([[0.0, 0.0], [1.0, 1.0]])
    dg = np.sqrt(diag) - 1e-6
    dg = dg + np.log(-np.expm1(-dg))
    raw = np.array([dg[0], 0.0, dg[1]])
    return KernelModel(c, TableProvider(c, np.tile(raw, (2, 1))))


def test_ellipses_diagonal():
    m = _diag_model(np.array([4.0, 1.0]))
    (c, vals, vecs), _ = ellipses(m, 2)
    assert np.allclose(vals, [0.25, 1.0], atol=1e-10)
    assert np.allclose(np.abs(vecs), np.eye(2), atol=1e-10)


def test_ellipses_reconstruction(rng, tmp_path):
    model = random_model(rng, 2, 7)
    items = ellipses(model, 5, seed=3)
    assert len(items) == 5
    cent = {tuple(c) for c in model.centers}
    for c, vals, vecs in items:
        i = [k for k, z in enumerate(model.centers) if np.array_equal(z, c)][0]
        cov = model.covariances[i]
        assert tuple(c) in cent and np.all(vals > 0)
        assert np.max(np.abs(vecs @ np.diag(vals) @ vecs.T - cov)) < 1e-10
        assert np.prod(vals) == pytest.approx(np.linalg.det(cov), rel=1e-10)
    assert [c.tolist() for c, _, _ in ellipses(model, 5, seed=3)] == [c.tolist() for c, _, _ in items]
    with pytest.raises(ValueError):
        ellipses(model, 8)
    write_ellipses_csv(items, tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "cx,cy,l1,l2,v1x,v1y,v2x,v2y" and len(lines) == 6


def test_metric_report_dict():
    r = MetricReport(nll=1.5, sizes={"test": 10})
    assert r.to_dict() == {"nll": 1.5, "sizes": {"test": 10}}
