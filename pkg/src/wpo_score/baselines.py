"""Reference score models.

* :class:`EmpiricalScore` - the heat flow of the empirical measure. Used in the
  reverse SDE it resamples the training set (memorization).
* :func:`isotropic_model` - a kernel model with constant precision
  ``(beta^2 eps)^-1 I`` at every training point; sampling it is early stopping
  at noise time ``eps``.
* :class:`DsmScoreNet` - a time-conditioned GeLU MLP trained by denoising
  score matching.
"""

import math
import time

import numpy as np

from .autodiff import Tape, gelu
from .kernel import KernelModel
from .precision import HIDDEN, TableProvider, isotropic_raw
from .rng import stream
from .training import NumericalAbort, Optimizer, TrainConfig, TrainReport

S_MIN = 1e-3
_CHUNK_FLOATS = 1 << 21


class EmpiricalScore:
    """``grad log (G_{beta^2/2, s} * empirical)`` over a fixed training set."""

    def __init__(self, trainset, beta=1.0, horizon=1.0):
        self.trainset = np.ascontiguousarray(np.asarray(trainset, dtype=float))
        if self.trainset.ndim != 2 or len(self.trainset) < 1:
            raise ValueError("trainset must be a non-empty (M, d) array")
        self.beta = float(beta)
        self.horizon = float(horizon)
        self._sq = np.sum(self.trainset**2, axis=1)

    @property
    def dim(self):
        return self.trainset.shape[1]

    def softmax_weights(self, x, s):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        return self._weights(X, s)

    def _weights(self, X, s):
        sq = np.sum(X * X, axis=1)[:, None] - 2.0 * X @ self.trainset.T + self._sq[None, :]
        logits = -np.maximum(sq, 0.0) / (2.0 * self.beta**2 * s)
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        return w / w.sum(axis=1, keepdims=True)

    def score(self, x, s):
        if not s > 0:
            raise ValueError(f"empirical score is singular at s = 0; got s = {s}")
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        step = max(1, _CHUNK_FLOATS // len(self.trainset))
        out = np.empty_like(X)
        for i in range(0, len(X), step):
            xb = X[i : i + step]
            mean = self._weights(xb, s) @ self.trainset
            out[i : i + step] = -(xb - mean) / (self.beta**2 * s)
        return out[0] if single else out

    def evaluate(self, x, s):
        return self.score(x, s)


def empirical_score(es, x, s):
    return es.score(x, s)


def isotropic_model(points, eps, beta=1.0, horizon=1.0):
    """Kernel model with ``Gamma = (beta^2 eps)^-1 I`` at every point."""
    points = np.asarray(points, dtype=float)
    raw = isotropic_raw(points.shape[1], 1.0 / (beta**2 * eps))
    provider = TableProvider(points, np.tile(raw, (len(points), 1)))
    return KernelModel(points, provider, beta=beta, horizon=horizon)


class DsmScoreNet:
    """GeLU MLP ``(x, s / T) -> R^d`` approximating ``grad log eta(x, s)``."""

    kind = "dsm_net"

    def __init__(self, weights, biases, beta=1.0, horizon=1.0):
        self.params = []
        for W, b in zip(weights, biases):
            self.params += [np.asarray(W, dtype=float), np.asarray(b, dtype=float)]
        self.beta = float(beta)
        self.horizon = float(horizon)

    @classmethod
    def init(cls, d, seed, beta=1.0, horizon=1.0, hidden=HIDDEN):
        rng = stream(seed, "init")
        widths = [d + 1, *hidden, d]
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, beta, horizon)

    @property
    def dim(self):
        return self.params[-1].shape[0]

    def _inputs(self, x, s):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        s = np.broadcast_to(np.asarray(s, dtype=float), (len(X),))
        return np.column_stack([X, s / self.horizon])

    def __call__(self, x, s):
        single = np.ndim(x) == 1
        h = self._inputs(x, s)
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            h = h @ self.params[2 * k] + self.params[2 * k + 1]
            if k < n_layers - 1:
                h = gelu(h)
        return h[0] if single else h

    def evaluate(self, x, s):
        return self(x, s)

    def output_var(self, tape, x, s):
        h = tape.const(self._inputs(x, s))
        ps = [tape.param(p) for p in self.params]
        n_layers = len(ps) // 2
        for k in range(n_layers):
            h = tape.affine(h, ps[2 * k], ps[2 * k + 1])
            if k < n_layers - 1:
                h = tape.gelu(h)
        return h

    def to_dict(self):
        return {
            "kind": self.kind,
            "schema_version": 1,
            "d": self.dim,
            "beta": self.beta,
            "horizon": self.horizon,
            "parameters": [p.tolist() for p in self.params],
        }

    @classmethod
    def from_dict(cls, doc):
        ps = [np.asarray(p, dtype=float) for p in doc["parameters"]]
        return cls(ps[0::2], ps[1::2], doc["beta"], doc["horizon"])


def _dsm_targets(net, y0, s, xi):
    y0 = np.atleast_2d(np.asarray(y0, dtype=float))
    s = np.asarray(s, dtype=float).reshape(-1)
    xi = np.asarray(xi, dtype=float).reshape(y0.shape)
    std = net.beta * np.sqrt(s)
    y = y0 + std[:, None] * xi
    target = -xi / std[:, None]  # -(y - y0) / (beta^2 s)
    lam = net.beta**2 * s
    return y, s, target, lam


def dsm_loss(net, y0, s, rng=None, xi=None, weights=None):
    """Variance-weighted DSM loss ``mean_b beta^2 s_b |net(y_b, s_b) + (y_b - y0_b) / (beta^2 s_b)|^2``.

    ``y = y0 + beta sqrt(s) xi``; ``xi`` is drawn from ``rng`` unless given.
    """
    y0 = np.atleast_2d(np.asarray(y0, dtype=float))
    if xi is None:
        xi = np.random.default_rng() if rng is None else rng
        xi = xi.standard_normal(y0.shape)
    y, s, target, lam = _dsm_targets(net, y0, s, xi)
    w = np.full(len(y0), 1.0 / len(y0)) if weights is None else np.asarray(weights, dtype=float)
    diff = net(y, s) - target
    return float(np.sum(w * lam * np.sum(diff * diff, axis=1)))


def dsm_loss_and_grad(net, y0, s, xi, weights=None):
    y, s, target, lam = _dsm_targets(net, y0, s, xi)
    w = np.full(len(y), 1.0 / len(y)) if weights is None else np.asarray(weights, dtype=float)
    tape = Tape()
    out = tape.weighted_sq_error(net.output_var(tape, y, s), target, w * lam)
    return float(out.value), tape.backward(out)


def train_dsm(data, config, beta=1.0, horizon=1.0, s_min=S_MIN, net=None):
    """Adam/SGD on the DSM loss with ``s ~ U[s_min, T]``; same loop shape as :func:`training.train`."""
    points = data.points if hasattr(data, "points") else np.asarray(data, dtype=float)
    if net is None:
        net = DsmScoreNet.init(points.shape[1], config.seed, beta, horizon)
    report = TrainReport()
    batches = stream(config.seed, "batches")
    noise = stream(config.seed, "dsm")
    opt = Optimizer(config, net.params)
    start = time.perf_counter()
    loss = float("nan")
    for step in range(1, config.steps + 1):
        idx = batches.integers(0, len(points), config.batch_size)
        s = noise.uniform(s_min, horizon, config.batch_size)
        xi = noise.standard_normal((config.batch_size, points.shape[1]))
        loss, grads = dsm_loss_and_grad(net, points[idx], s, xi)
        if not math.isfinite(loss):
            raise NumericalAbort(step, idx, loss)
        net.params[:] = opt.step(net.params, grads)
        if (config.eval_every and step % config.eval_every == 0) or step == config.steps:
            report.history.append((step, loss, float("nan"), time.perf_counter() - start))
    return net, report


__all__ = [
    "EmpiricalScore",
    "DsmScoreNet",
    "TrainConfig",
    "dsm_loss",
    "dsm_loss_and_grad",
    "empirical_score",
    "isotropic_model",
    "train_dsm",
]
