"""Terminal-time implicit score matching for the kernel model.

The loss is evaluated at noise time ``s = 0`` only:

    loss = mean_b [ 2 * Laplace(pi)/pi (x_b) - |grad log pi (x_b)|^2 ]

which equals the ISM objective ``|grad log pi|^2 + 2 Laplace(log pi)``. No
time integral appears anywhere in training; the closed-form heat flow carries
the fitted terminal density to every other time.
"""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .core_math import LOG_2PI, cholesky_to_precision, softmax, trapezoid_weights
from .kernel import KernelModel
from .rng import stream

log = logging.getLogger(__name__)


class NumericalAbort(RuntimeError):
    """Training produced a non-finite loss or an unusable precision factor."""

    def __init__(self, step, indices, loss, reason="non-finite loss"):
        self.step = step
        self.indices = indices
        self.loss = loss
        super().__init__(f"{reason} {loss} at step {step}; batch indices {list(indices)[:16]}")


def ism_loss_terms(centers, gammas, logdets, X, weights=None, grad=False):
    """Weighted terminal ISM loss and, optionally, its gradient w.r.t. ``Gamma_i``.

    ``weights`` default to ``1/B``. The gradient is returned split as
    ``(G, g_logdet)``: ``G (N, d, d)`` multiplies ``dGamma`` through the
    quadratic terms and ``g_logdet (N,)`` multiplies ``d log det Gamma``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    B = len(X)
    if B == 0:
        raise ValueError("terminal ISM loss needs a non-empty batch")
    N, d = centers.shape
    w_b = np.full(B, 1.0 / B) if weights is None else np.asarray(weights, dtype=float)
    r = X[:, None, :] - centers[None, :, :]
    # Gamma_i r_bi = -grad y_i(x_b), as a batched matmul over centers
    gr = np.matmul(gammas, r.transpose(1, 2, 0)).transpose(2, 0, 1)
    quad = np.sum(r * gr, axis=2)
    y = -0.5 * quad + 0.5 * logdets[None, :] - 0.5 * d * LOG_2PI - math.log(N)
    w = softmax(y, axis=1)
    S = -np.einsum("bn,bni->bi", w, gr)
    traces = np.trace(gammas, axis1=1, axis2=2)
    a = np.sum(gr * gr, axis=2) - traces[None, :]
    R = np.sum(w * a, axis=1)
    per_point = 2.0 * R - np.sum(S * S, axis=1)
    loss = float(np.dot(w_b, per_point))
    if not grad:
        return loss, per_point
    # d loss / d y_i through the softmax
    e = 2.0 * a + 2.0 * np.einsum("bi,bni->bn", S, gr)
    c = w * (e - np.sum(w * e, axis=1, keepdims=True)) * w_b[:, None]
    ww = w * w_b[:, None]
    # y: -1/2 r r^T ; a: 2 Gamma r r^T - I ; -|S|^2: 2 S r^T
    M = -0.5 * c[:, :, None] * r + ww[:, :, None] * (4.0 * gr + 2.0 * S[:, None, :])
    G = np.matmul(M.transpose(1, 2, 0), r.transpose(1, 0, 2))
    G -= 2.0 * np.sum(ww, axis=0)[:, None, None] * np.eye(d)[None]
    g_logdet = 0.5 * np.sum(c, axis=0)
    return loss, per_point, G, g_logdet


def ism_node(tape, L_var, centers, X, weights=None):
    """Record the terminal ISM loss as one composite node over ``L (N, d, d)``."""
    L = L_var.value
    gammas, logdets = cholesky_to_precision(L)
    loss, _, G, g_logdet = ism_loss_terms(centers, gammas, logdets, X, weights, grad=True)
    diag = np.diagonal(L, axis1=1, axis2=2)

    def vjp(g):
        gL = np.tril((G + np.swapaxes(G, 1, 2)) @ L)
        idx = np.arange(L.shape[1])
        gL[:, idx, idx] += 2.0 * g_logdet[:, None] / diag
        return (g * gL,)

    return tape.record(loss, (L_var,), vjp)


def terminal_ism_loss(model, batch, weights=None):
    """Mean over ``batch`` of ``2 * laplacian_ratio - |score|^2`` at ``s = 0``."""
    model.check_fresh()
    loss, _ = ism_loss_terms(model.centers, model.precisions, model.logdets, batch, weights)
    return loss


def ism_loss_and_grad(model, batch, weights=None):
    """Loss and its gradient w.r.t. every provider parameter (tape backward)."""
    tape = Tape()
    L_var = model.provider.factor_var(tape, model.centers)
    out = ism_node(tape, L_var, model.centers, batch, weights)
    return float(out.value), tape.backward(out)


def esm_loss_oracle(model, true_logpdf, grid):
    """1-D quadrature of ``int |grad log pi_model - grad log pi|^2 pi dx``.

    ``true_logpdf`` maps an ``(m, 1)`` array to log-densities; its derivative
    is taken by a central difference with step 1e-5.
    """
    if model.dim != 1:
        raise NotImplementedError("explicit score matching oracle is 1-D only")
    grid = np.asarray(grid, dtype=float).reshape(-1)
    x = grid[:, None]
    h = 1e-5
    logp = true_logpdf(x)
    true_score = (true_logpdf(x + h) - true_logpdf(x - h)) / (2 * h)
    diff = model.score(x, 0.0)[:, 0] - true_score
    return float(np.sum(trapezoid_weights(grid) * np.exp(logp) * diff * diff))


def ism_quadrature(model, true_logpdf, grid):
    """The terminal ISM loss under ``pi`` by 1-D trapezoid quadrature."""
    grid = np.asarray(grid, dtype=float).reshape(-1)
    weights = trapezoid_weights(grid) * np.exp(true_logpdf(grid[:, None]))
    return terminal_ism_loss(model, grid[:, None], weights=weights)


# -- optimizers ---------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(params):
    return AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam. Returns new parameter arrays; updates ``state``."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("parameter and gradient shapes do not match")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        out.append(p - lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + eps))
    return out


def sgd_fallback_step(params, grads, lr):
    return [p - lr * g for p, g in zip(params, grads)]


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 0
    checkpoint_path: str = None

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainReport:
    history: list = field(default_factory=list)  # (step, loss, nll, seconds)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("step,loss,nll,seconds\n")
            for step, loss, nll, sec in self.history:
                fh.write(f"{step},{loss:.17g},{nll:.17g},{sec:.17g}\n")


class Optimizer:
    """Adam or plain SGD over a list of parameter arrays."""

    def __init__(self, config, params):
        self.config = config
        self.state = adam_init(params)

    def step(self, params, grads):
        c = self.config
        if c.optimizer == "sgd":
            return sgd_fallback_step(params, grads, c.learning_rate)
        return adam_step(params, grads, self.state, c.learning_rate, c.beta1, c.beta2, c.eps)


def _set_params(provider, new):
    for k, p in enumerate(new):
        provider.params[k] = p


def train(data, centers, provider, config, beta=1.0, horizon=1.0, heldout=None, callback=None):
    """Fit the precision provider by terminal ISM on minibatches of ``data``.

    Minibatches are drawn with replacement from a seeded stream. Returns the
    fitted :class:`KernelModel` and a :class:`TrainReport`; the report gets a
    row every ``eval_every`` steps and at the end (held-out NLL is NaN when no
    ``heldout`` set is given).
    """
    points = data.points if hasattr(data, "points") else np.asarray(data, dtype=float)
    model = KernelModel(centers, provider, beta=beta, horizon=horizon)
    report = TrainReport()
    rng = stream(config.seed, "batches")
    opt = Optimizer(config, provider.params)
    start = time.perf_counter()

    def evaluate(step, loss):
        nll = float("nan")
        if heldout is not None:
            nll = -float(np.mean(model.log_density(heldout, 0.0)))
        report.history.append((step, loss, nll, time.perf_counter() - start))
        if config.checkpoint_path:
            from .io import save_model

            save_model(model, config.checkpoint_path)

    loss = float("nan")
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(points), config.batch_size)
        loss, grads = ism_loss_and_grad(model, points[idx])
        if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise NumericalAbort(step, idx, loss)
        _set_params(provider, opt.step(provider.params, grads))
        try:
            model.refresh()
        except np.linalg.LinAlgError:
            raise NumericalAbort(step, idx, loss, "singular precision factor after update; loss was")
        if not np.all(np.isfinite(model.covariances)):
            raise NumericalAbort(step, idx, loss, "non-finite covariance after update; loss was")
        if callback is not None:
            callback(step, loss, model)
        if config.eval_every and step % config.eval_every == 0 and step != config.steps:
            evaluate(step, loss)
    if config.steps > 0:
        evaluate(config.steps, loss)
    return model, report
