"""Seeded synthetic toy distributions.

Parameterizations (u, h uniform; all sets get ``N(0, noise^2 I)`` jitter):

* ``two_moons``: upper arc ``(cos u, sin u)``, lower arc
  ``(1 - cos u, 0.5 - sin u)``, ``u ~ U[0, pi]``, arc chosen by a fair coin.
* ``rings``: circles of radius 0.5 and 1.0, radius chosen by a fair coin.
* ``spiral``: ``r(u) (cos u, sin u)`` with ``r(u) = u / (3 pi)``, ``u ~ U[0, 3 pi]``.
* ``checkerboard``: uniform over the 8 "black" unit squares of a 4x4 board on
  ``[-2, 2]^2`` (squares with even ``floor(x) + floor(y)``).
* ``swissroll2d``: ``(u cos u, u sin u) / (4.5 pi)``, ``u ~ U[1.5 pi, 4.5 pi]``.
* ``swissroll6d``: ``(u cos u, h, u sin u) / 10`` with ``h ~ U[0, 21]``,
  zero-padded to 6-D and rotated by a fixed orthogonal matrix.
* ``gmm_ground_truth``: explicit Gaussian mixture given in ``extra``
  (``weights``, ``means``, ``covs``).
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

DATASETS = (
    "two_moons",
    "checkerboard",
    "rings",
    "spiral",
    "swissroll2d",
    "swissroll6d",
    "gmm_ground_truth",
)

_ORTHOGONAL_SEED = 6


class ConfigError(ValueError):
    """Invalid dataset or run configuration."""


@dataclass
class DatasetSpec:
    name: str
    n: int
    noise: float = 0.0
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in DATASETS:
            raise ConfigError(f"unknown dataset {self.name!r}; choose from {', '.join(DATASETS)}")
        if self.n < 1:
            raise ConfigError(f"dataset size must be >= 1, got {self.n}")
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")


@dataclass
class Dataset:
    points: np.ndarray
    spec: DatasetSpec = None

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]


def embedding_matrix(dim=6):
    """The fixed orthogonal matrix used by ``swissroll6d``."""
    g = np.random.Generator(np.random.Philox(np.random.SeedSequence([_ORTHOGONAL_SEED, dim])))
    q, r = np.linalg.qr(g.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def _two_moons(rng, n):
    u = rng.uniform(0.0, math.pi, n)
    upper = rng.random(n) < 0.5
    x = np.where(upper, np.cos(u), 1.0 - np.cos(u))
    y = np.where(upper, np.sin(u), 0.5 - np.sin(u))
    return np.column_stack([x, y])


def _rings(rng, n):
    u = rng.uniform(0.0, 2 * math.pi, n)
    r = np.where(rng.random(n) < 0.5, 0.5, 1.0)
    return np.column_stack([r * np.cos(u), r * np.sin(u)])


def _spiral(rng, n):
    u = rng.uniform(0.0, 3 * math.pi, n)
    r = u / (3 * math.pi)
    return np.column_stack([r * np.cos(u), r * np.sin(u)])


def _checkerboard(rng, n):
    black = [(i, j) for i in range(-2, 2) for j in range(-2, 2) if (i + j) % 2 == 0]
    corners = np.array(black, dtype=float)[rng.integers(0, len(black), n)]
    return corners + rng.random((n, 2))


def _swissroll2d(rng, n):
    u = rng.uniform(1.5 * math.pi, 4.5 * math.pi, n)
    return np.column_stack([u * np.cos(u), u * np.sin(u)]) / (4.5 * math.pi)


def _swissroll6d(rng, n):
    u = rng.uniform(1.5 * math.pi, 4.5 * math.pi, n)
    h = rng.uniform(0.0, 21.0, n)
    pts = np.zeros((n, 6))
    pts[:, :3] = np.column_stack([u * np.cos(u), h, u * np.sin(u)]) / 10.0
    return pts @ embedding_matrix(6).T


def _gmm(rng, n, extra):
    try:
        means = np.atleast_2d(np.asarray(extra["means"], dtype=float))
        covs = np.asarray(extra["covs"], dtype=float)
    except KeyError as exc:
        raise ConfigError(f"gmm_ground_truth needs extra[{exc.args[0]!r}]") from None
    k, d = means.shape
    covs = covs.reshape(k, d, d)
    weights = np.asarray(extra.get("weights", np.full(k, 1.0 / k)), dtype=float)
    weights = weights / weights.sum()
    labels = rng.choice(k, size=n, p=weights)
    chol = np.linalg.cholesky(covs)
    z = rng.standard_normal((n, d))
    return means[labels] + np.einsum("nij,nj->ni", chol[labels], z)


def generate(spec):
    """Draw ``spec.n`` points; a deterministic function of ``spec``."""
    rng = stream(spec.seed, "data")
    if spec.name == "gmm_ground_truth":
        pts = _gmm(rng, spec.n, spec.extra)
    else:
        pts = {
            "two_moons": _two_moons,
            "rings": _rings,
            "spiral": _spiral,
            "checkerboard": _checkerboard,
            "swissroll2d": _swissroll2d,
            "swissroll6d": _swissroll6d,
        }[spec.name](rng, spec.n)
    if spec.noise > 0:
        pts = pts + spec.noise * rng.standard_normal(pts.shape)
    return Dataset(np.ascontiguousarray(pts, dtype=float), spec)


def gmm_logpdf(x, weights, means, covs):
    """Log-density of an explicit Gaussian mixture at rows of ``x``."""
    from scipy.stats import multivariate_normal

    from .core_math import log_sum_exp

    x = np.atleast_2d(np.asarray(x, dtype=float))
    weights = np.asarray(weights, dtype=float)
    terms = np.stack(
        [np.log(w) + multivariate_normal(m, c).logpdf(x).reshape(-1) for w, m, c in zip(weights, means, covs)],
        axis=1,
    )
    return log_sum_exp(terms, axis=1)


def split(ds, train_fraction, seed):
    """Seeded disjoint partition into ``floor(f n)`` and ``n - floor(f n)`` points."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(ds.points)
    perm = stream(seed, "split").permutation(n)
    k = int(math.floor(train_fraction * n))
    return Dataset(ds.points[perm[:k]], ds.spec), Dataset(ds.points[perm[k:]], ds.spec)


def subsample_centers(ds, n_centers, seed):
    """Pick ``n_centers`` training points without replacement."""
    points = ds.points if isinstance(ds, Dataset) else np.asarray(ds, dtype=float)
    if not 1 <= n_centers <= len(points):
        raise ValueError(f"cannot draw {n_centers} centers from {len(points)} points")
    idx = stream(seed, "centers").choice(len(points), size=n_centers, replace=False)
    return points[idx].copy()


def write_csv(points, path, header=False):
    """One row per point, ``%.17g`` formatting."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(",".join(f"x{i}" for i in range(points.shape[1])) + "\n")
        for row in points:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def read_csv(path):
    """Read a point CSV written by :func:`write_csv` (header optional)."""
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if i == 0:
                try:
                    float(row[0])
                except ValueError:
                    continue
            rows.append([float(v) for v in row])
    return np.array(rows, dtype=float).reshape(len(rows), -1) if rows else np.zeros((0, 0))
