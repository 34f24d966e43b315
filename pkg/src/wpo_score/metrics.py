"""Evaluation metrics: held-out NLL, unbiased MMD^2, NN memorization score, ellipses."""

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist

from .rng import stream

MEDIAN_SUBSAMPLE = 2000
_CHUNK = 2048


def nll(model, heldout):
    """Mean negative log-density (nats per point) at ``s = 0``."""
    heldout = np.atleast_2d(np.asarray(heldout, dtype=float))
    if heldout.size == 0:
        raise ValueError("heldout set is empty")
    return -float(np.mean(model.log_density(heldout, 0.0)))


def median_bandwidth(X, Y, seed=0):
    """Median pairwise distance of ``X`` and ``Y`` pooled (at most 2000 seeded points)."""
    Z = np.concatenate([X, Y], axis=0)
    if len(Z) > MEDIAN_SUBSAMPLE:
        idx = stream(seed, "metrics").choice(len(Z), MEDIAN_SUBSAMPLE, replace=False)
        Z = Z[idx]
    h = float(np.median(pdist(Z)))
    if not h > 0:
        raise ValueError("median heuristic gave a zero bandwidth")
    return h


def _kernel_sum(A, B, h, same):
    # sum of exp(-|a - b|^2 / 2h^2), chunked over rows of A
    total = 0.0
    for i in range(0, len(A), _CHUNK):
        D = cdist(A[i : i + _CHUNK], B, "sqeuclidean")
        total += float(np.sum(np.exp(-D / (2.0 * h * h))))
    if same:
        total -= len(A)  # drop the diagonal k(a, a) = 1
    return total


def mmd2_unbiased(X, Y, bandwidth="median", seed=0):
    """Unbiased U-statistic estimate of MMD^2 with a Gaussian kernel.

    ``bandwidth="median"`` uses :func:`median_bandwidth`. The estimate can be
    negative when the two distributions agree.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    m, n = len(X), len(Y)
    if m < 2 or n < 2:
        raise ValueError("MMD^2 needs at least two points in each sample")
    if X.shape[1] != Y.shape[1]:
        raise ValueError("samples have different dimensions")
    if isinstance(bandwidth, str) and bandwidth != "median":
        raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
    h = median_bandwidth(X, Y, seed) if isinstance(bandwidth, str) else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    kxx = _kernel_sum(X, X, h, True) / (m * (m - 1))
    kyy = _kernel_sum(Y, Y, h, True) / (n * (n - 1))
    kxy = _kernel_sum(X, Y, h, False) / (m * n)
    return kxx + kyy - 2.0 * kxy


def nn_distances(samples, reference, method="brute"):
    """Distance from each sample to its nearest reference point."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    if samples.size == 0 or reference.size == 0:
        raise ValueError("samples and reference must be nonempty")
    if method == "kdtree":
        return cKDTree(reference).query(samples)[0]
    if method != "brute":
        raise ValueError(f"unknown method {method!r}")
    out = np.empty(len(samples))
    for i in range(0, len(samples), _CHUNK):
        out[i : i + _CHUNK] = np.sqrt(cdist(samples[i : i + _CHUNK], reference, "sqeuclidean").min(axis=1))
    return out


def nn_distance_stats(samples, reference, method="brute", quantiles=(0.1, 0.25, 0.5, 0.75, 0.9)):
    """``(median, {q: quantile})`` of nearest-neighbor distances."""
    dist = nn_distances(samples, reference, method)
    return float(np.median(dist)), {q: float(np.quantile(dist, q)) for q in quantiles}


def nn_median_ratio(generated, heldout, train):
    """Median NN distance to ``train`` of generated samples over that of held-out samples.

    Much below 1 flags memorization; near 1 means generated points sit no
    closer to the training set than fresh data does.
    """
    gen, _ = nn_distance_stats(generated, train)
    ref, _ = nn_distance_stats(heldout, train)
    if ref == 0.0:
        raise ValueError("held-out median NN distance is zero; held-out overlaps the training set")
    return gen / ref


def ellipses(model, k, seed=0):
    """Eigen-decomposition of the covariance ``Gamma(Z_i)^-1`` at ``k`` seeded centers.

    Returns a list of ``(center, eigvals, eigvecs)`` with eigenvalues ascending
    and eigenvectors in the columns.
    """
    model.check_fresh()
    if not 0 <= k <= model.n_centers:
        raise ValueError(f"k must lie in [0, {model.n_centers}], got {k}")
    idx = np.sort(stream(seed, "metrics", 1).choice(model.n_centers, k, replace=False))
    out = []
    for i in idx:
        vals, vecs = np.linalg.eigh(model.covariances[i])
        out.append((model.centers[i].copy(), vals, vecs))
    return out


def write_ellipses_csv(items, path):
    """Columns ``cx, cy, l1, l2, v1x, v1y, v2x, v2y`` (2-D models only)."""
    with open(path, "w") as fh:
        fh.write("cx,cy,l1,l2,v1x,v1y,v2x,v2y\n")
        for c, vals, vecs in items:
            if len(c) != 2:
                raise ValueError("ellipse CSV is for 2-D models")
            row = [c[0], c[1], vals[0], vals[1], vecs[0, 0], vecs[1, 0], vecs[0, 1], vecs[1, 1]]
            fh.write(",".join("%.17g" % v for v in row) + "\n")


@dataclass
class MetricReport:
    nll: float = None
    mmd2: float = None
    nn_median_ratio: float = None
    sizes: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None and v != {}}
