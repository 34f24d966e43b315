"""Precision providers: map a point ``z`` to a Cholesky factor ``L(z)``.

``Gamma(z) = L(z) L(z)^T``. Raw outputs are packed row-major lower
triangles; :func:`~wpo_score.autodiff.decode_cholesky` turns the diagonal
slots positive.
"""

import math

import numpy as np

from .autodiff import Tape, decode_cholesky, gelu
from .core_math import cholesky_to_precision, softplus_inverse, tril_size
from .rng import stream

HIDDEN = (64, 64, 64, 64, 64)
INIT_NOISE_TIME = 0.01


def isotropic_raw(d, precision):
    """Raw packed entries decoding to ``sqrt(precision) * I``."""
    raw = np.zeros(tril_size(d))
    rows, cols = np.tril_indices(d)
    raw[rows == cols] = softplus_inverse(math.sqrt(precision) - 1e-6)
    return raw


class TableProvider:
    """One free packed Cholesky factor per kernel center."""

    kind = "table"

    def __init__(self, centers, params):
        self.centers = np.asarray(centers, dtype=float)
        params = np.asarray(params, dtype=float)
        n, d = self.centers.shape
        if params.shape != (n, tril_size(d)):
            raise ValueError(f"table params must have shape {(n, tril_size(d))}, got {params.shape}")
        self.params = [params]
        self._index = {c.tobytes(): i for i, c in enumerate(self.centers)}

    @classmethod
    def init(cls, centers, beta=1.0, s0=INIT_NOISE_TIME):
        """Every center starts at ``Gamma = (beta^2 s0)^-1 I``, a mild isotropic KDE."""
        centers = np.asarray(centers, dtype=float)
        raw = isotropic_raw(centers.shape[1], 1.0 / (beta**2 * s0))
        return cls(centers, np.tile(raw, (len(centers), 1)))

    @property
    def dim(self):
        return self.centers.shape[1]

    def _rows(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if z.shape == self.centers.shape and np.array_equal(z, self.centers):
            return slice(None)
        try:
            return np.array([self._index[row.tobytes()] for row in np.ascontiguousarray(z)])
        except KeyError:
            raise KeyError("table provider is only defined at its kernel centers") from None

    def raw(self, z):
        return self.params[0][self._rows(z)]

    def factor_var(self, tape, z):
        """Record ``z -> L(z)`` on ``tape``; registers the table as a parameter."""
        rows = self._rows(z)
        table = tape.param(self.params[0])
        if isinstance(rows, slice):
            return tape.decode_cholesky(table)
        full = table.value

        def vjp(g):
            out = np.zeros_like(full)
            np.add.at(out, rows, g)
            return (out,)

        picked = tape.record(full[rows], (table,), vjp)
        return tape.decode_cholesky(picked)

    def factors(self, z):
        return decode_cholesky(self.raw(z), self.dim)

    def to_dict(self):
        return {"kind": self.kind, "parameters": [self.params[0].tolist()]}


class MlpProvider:
    """Feedforward GeLU network ``psi: R^d -> R^(d(d+1)/2)``."""

    kind = "mlp"

    def __init__(self, weights, biases):
        self.params = []
        for W, b in zip(weights, biases):
            self.params += [np.asarray(W, dtype=float), np.asarray(b, dtype=float)]

    @classmethod
    def init(cls, d, seed, hidden=HIDDEN):
        """He-style fan-in uniform weights, zero biases."""
        rng = stream(seed, "init")
        widths = [d, *hidden, tril_size(d)]
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def dim(self):
        return self.params[0].shape[0]

    @property
    def widths(self):
        return [self.params[0].shape[0]] + [W.shape[1] for W in self.params[::2]]

    def raw(self, z):
        h = np.atleast_2d(np.asarray(z, dtype=float))
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            h = h @ self.params[2 * k] + self.params[2 * k + 1]
            if k < n_layers - 1:
                h = gelu(h)
        return h

    def factor_var(self, tape, z):
        h = tape.const(np.atleast_2d(np.asarray(z, dtype=float)))
        layer_params = [tape.param(p) for p in self.params]
        n_layers = len(layer_params) // 2
        for k in range(n_layers):
            h = tape.affine(h, layer_params[2 * k], layer_params[2 * k + 1])
            if k < n_layers - 1:
                h = tape.gelu(h)
        return tape.decode_cholesky(h)

    def factors(self, z):
        return decode_cholesky(self.raw(z), self.dim)

    def to_dict(self):
        return {
            "kind": self.kind,
            "parameters": [p.tolist() for p in self.params],
        }


def provider_from_dict(doc, centers):
    kind = doc["kind"]
    params = [np.asarray(p, dtype=float) for p in doc["parameters"]]
    if kind == "table":
        return TableProvider(centers, params[0].reshape(len(centers), -1))
    if kind == "mlp":
        return MlpProvider(params[0::2], params[1::2])
    raise ValueError(f"unknown provider kind {kind!r}")


def provider_precision(provider, z):
    """``Gamma(z)`` for one point ``(d,)`` or a batch ``(n, d)``."""
    z = np.asarray(z, dtype=float)
    for p in provider.params:
        if not np.all(np.isfinite(p)):
            raise ValueError("provider has non-finite parameters")
    gamma, _ = cholesky_to_precision(provider.factors(np.atleast_2d(z)))
    return gamma[0] if z.ndim == 1 else gamma


def init_params(kind, seed, centers, beta=1.0):
    """Fresh provider of the given kind; table init ignores ``seed``."""
    centers = np.asarray(centers, dtype=float)
    if kind == "table":
        return TableProvider.init(centers, beta=beta)
    if kind == "mlp":
        return MlpProvider.init(centers.shape[1], seed)
    raise ValueError(f"unknown provider kind {kind!r}")


def taped_factors(provider, z):
    """Convenience: a fresh tape holding the forward pass to ``L(z)``."""
    tape = Tape()
    return tape, provider.factor_var(tape, z)
