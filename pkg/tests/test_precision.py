import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wpo_score.autodiff import Tape, TapeError, decode_cholesky, gelu, gelu_grad
from wpo_score.core_math import cholesky, softplus
from wpo_score.kernel import KernelModel
from wpo_score.precision import (
    MlpProvider,
    TableProvider,
    init_params,
    provider_from_dict,
    provider_precision,
)
from wpo_score.training import ism_loss_and_grad, terminal_ism_loss


def test_gelu_values():
    assert gelu(0.0) == 0.0
    # 10 * Phi(10) rounds to exactly 10.0 in double precision
    assert 9.999 < gelu(10.0) <= 10.0
    assert gelu(-10.0) == pytest.approx(0.0, abs=1e-20)


def test_gelu_grad_fd(rng):
    x = rng.normal(0, 2, 100)
    h = 1e-6
    fd = (gelu(x + h) - gelu(x - h)) / (2 * h)
    assert np.max(np.abs(gelu_grad(x) - fd)) < 1e-8


def test_taped_gelu_matches_closed_form(rng):
    x = rng.normal(size=(4, 3))
    tape = Tape()
    v = tape.param(x)
    out = tape.sum_squares(tape.gelu(v))
    (g,) = tape.backward(out)
    assert np.allclose(g, 2 * gelu(x) * gelu_grad(x), atol=1e-14)


def test_backward_sum_squares():
    tape = Tape()
    p = tape.param(np.array([1.0, -2.0, 3.0]))
    (g,) = tape.backward(tape.sum_squares(p))
    assert np.array_equal(g, [2.0, -4.0, 6.0])


def test_backward_before_forward():
    tape = Tape()
    with pytest.raises(TapeError):
        tape.backward(tape.const(1.0))


def test_table_zero_params_decode():
    prov = TableProvider(np.zeros((1, 2)), np.zeros((1, 3)))
    G = provider_precision(prov, np.zeros(2))
    diag = softplus(0.0) + 1e-6
    assert diag == pytest.approx(0.6931481805599453, abs=1e-15)
    assert np.allclose(G, np.diag([diag**2, diag**2]), atol=1e-15)
    assert G[0, 0] == pytest.approx(0.4805, abs=1e-4)


def test_table_init_near_100(rng):
    centers = rng.normal(size=(7, 3))
    G = provider_precision(TableProvider.init(centers), centers)
    assert np.allclose(G, 100 * np.eye(3), rtol=0, atol=1.0)
    G2 = provider_precision(TableProvider.init(centers, beta=2.0), centers)
    assert np.allclose(G2, 25 * np.eye(3), atol=0.25)


def test_table_outside_centers():
    prov = TableProvider.init(np.zeros((2, 2)) + [[0, 0], [1, 1]])
    with pytest.raises(KeyError):
        prov.factors(np.array([[0.5, 0.5]]))


@settings(max_examples=40)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1), st.floats(0.1, 30))
def test_decoded_precision_always_spd(d, seed, scale):
    raw = np.random.default_rng(seed).normal(0, scale, (5, d * (d + 1) // 2))
    L = decode_cholesky(raw, d)
    # a positive diagonal makes L L^T SPD
    assert np.all(np.diagonal(L, axis1=1, axis2=2) >= 1e-6)
    if scale <= 3:
        for g in L @ np.swapaxes(L, 1, 2):
            cholesky(g)


def test_mlp_deterministic_and_widths():
    p1 = MlpProvider.init(2, 5)
    p2 = MlpProvider.init(2, 5)
    assert all(np.array_equal(a, b) for a, b in zip(p1.params, p2.params))
    assert p1.widths == [2, 64, 64, 64, 64, 64, 3]
    z = np.array([[0.3, -0.2]])
    assert np.array_equal(provider_precision(p1, z), provider_precision(p1, z))
    assert all(np.all(b == 0) for b in p1.params[1::2])
    bound = np.sqrt(6.0 / 2)
    assert np.max(np.abs(p1.params[0])) <= bound


def test_mlp_zero_hidden_weights_constant():
    prov = MlpProvider.init(2, 1)
    for k in range(0, len(prov.params), 2):
        prov.params[k + 1] = np.full_like(prov.params[k + 1], 0.3)
    for k in range(2, len(prov.params), 2):
        prov.params[k] = np.zeros_like(prov.params[k])
    z = np.random.default_rng(0).normal(size=(10, 2))
    G = provider_precision(prov, z)
    assert np.allclose(G, G[0], atol=0)


def test_mlp_init_offdiag_mean_over_seeds():
    vals = np.array([MlpProvider.init(2, s).raw(np.zeros((1, 2)))[0, 1] for s in range(100)])
    # biases are zero, so the raw output at the origin is exactly zero for every seed
    assert abs(vals.mean()) <= 0.1 * max(vals.std(), 1e-300) or np.all(vals == 0)


def test_non_finite_params_rejected():
    prov = TableProvider.init(np.zeros((1, 2)))
    prov.params[0][0, 0] = np.nan
    with pytest.raises(ValueError):
        provider_precision(prov, np.zeros(2))


def test_provider_dict_round_trip(rng):
    centers = rng.normal(size=(4, 2))
    for prov in (TableProvider.init(centers), MlpProvider.init(2, 3, hidden=(8, 8))):
        back = provider_from_dict(prov.to_dict(), centers)
        assert all(np.array_equal(a, b) for a, b in zip(prov.params, back.params))
    with pytest.raises(ValueError):
        init_params("nope", 0, centers)


def _fd_grad(model, batch, h=1e-5, weights=None):
    prov = model.provider
    out = []
    for k, p in enumerate(prov.params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            vals = []
            for s in (h, -h):
                p[idx] = orig + s
                model.refresh()
                vals.append(terminal_ism_loss(model, batch, weights))
            p[idx] = orig
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        out.append(g)
    model.refresh()
    return out


def test_tiny_ism_gradient_per_coordinate(rng):
    # d=2, N=3, batch 8
    from wpo_score.checks import random_model

    model = random_model(rng, 2, 3)
    batch = rng.normal(size=(8, 2))
    _, grads = ism_loss_and_grad(model, batch)
    (fd,) = _fd_grad(model, batch)
    rel = np.abs(grads[0] - fd) / np.maximum(np.abs(fd), 1e-8)
    assert np.max(rel) < 1e-4


def test_zero_batch_weight_zero_gradient(rng):
    from wpo_score.checks import random_model

    model = random_model(rng, 2, 3)
    batch = rng.normal(size=(8, 2))
    _, grads = ism_loss_and_grad(model, batch, weights=np.zeros(8))
    assert all(np.all(g == 0) for g in grads)


def test_table_subset_gather_gradient(rng):
    centers = rng.normal(size=(4, 2))
    prov = TableProvider.init(centers)
    tape = Tape()
    L = prov.factor_var(tape, centers[[2, 0, 2]])
    (g,) = tape.backward(tape.sum_squares(L))
    assert np.all(g[[1, 3]] == 0) and np.any(g[2] != 0) and np.any(g[0] != 0)
    model = KernelModel(centers, prov)
    assert model.n_centers == 4
