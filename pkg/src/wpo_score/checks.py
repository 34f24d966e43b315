"""Built-in property suites: HJB residual, FD gradients, dual-path equivalences, heat closure.

Each suite returns a list of :class:`CheckResult`; a suite passes when every
result does. The random models are drawn from the ``check`` stream, so the
suites are deterministic given a seed.
"""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import flatten, unflatten
from .baselines import EmpiricalScore, isotropic_model
from .core_math import heat_kernel, pack_tril, trapezoid_weights
from .kernel import KernelModel, MistimedKernelModel, hjb_residual
from .lifted import assemble, lifted_score
from .precision import MlpProvider, TableProvider
from .rng import stream
from .training import ism_loss_and_grad, terminal_ism_loss

SUITES = ("hjb", "gradcheck", "equiv", "heat")


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{tag} {self.name}: {self.value:.3e} vs {self.threshold:.3e}{extra}"


def _below(name, value, threshold, detail=""):
    return CheckResult(name, float(value), float(threshold), bool(value < threshold), detail)


def random_factor(rng, d, low=0.5, high=2.0, offdiag=0.5):
    """A lower-triangular factor with diagonal in ``[low, high]``."""
    L = np.tril(rng.uniform(-offdiag, offdiag, (d, d)), -1)
    L[np.diag_indices(d)] = rng.uniform(low, high, d)
    return L


def random_model(rng, d, n_centers, beta=1.0, horizon=1.0, cls=KernelModel, **kw):
    """Kernel model with a table provider holding random SPD precisions."""
    centers = rng.normal(0.0, 1.0, (n_centers, d))
    provider = TableProvider(centers, np.zeros((n_centers, d * (d + 1) // 2)))
    raw = []
    for _ in range(n_centers):
        L = random_factor(rng, d)
        # invert the softplus decode on the diagonal
        diag = np.diag(L) - 1e-6
        L = L.copy()
        L[np.diag_indices(d)] = diag + np.log(-np.expm1(-diag))
        raw.append(pack_tril(L))
    provider.params[0] = np.array(raw)
    return cls(centers, provider, beta=beta, horizon=horizon, **kw)


# -- HJB ----------------------------------------------------------------------


def _hjb_max(model, X, ts, fd_step):
    worst = 0.0
    for x, t in zip(X, ts):
        r, dt = hjb_residual(model, x, t, fd_step, return_dt=True)
        worst = max(worst, abs(r) / (1.0 + abs(dt)))
    return worst


def hjb_suite(seed=0, n_models=20, n_points=1000, fd_step=1e-4, rate=1.0):
    """Normalized residual ``max |r| / (1 + |dU/dt|)`` over random models and ``(x, t)``.

    ``rate != 1`` swaps in :class:`MistimedKernelModel` (a corrupted model that
    must fail the residual check).
    """
    extra = {} if rate == 1.0 else {"cls": MistimedKernelModel, "rate": rate}
    rng = stream(seed, "check", 1)
    worst, worst_half = 0.0, 0.0
    per_model = max(1, n_points // n_models)
    for k in range(n_models):
        d = int(rng.integers(1, 4))
        N = int(rng.integers(1, 9))
        beta = float(rng.choice([0.5, 1.0, 2.0]))
        model = random_model(rng, d, N, beta=beta, **extra)
        X = model.centers[rng.integers(0, N, per_model)] + rng.normal(0.0, 1.0, (per_model, d))
        ts = rng.uniform(2 * fd_step, model.horizon - 2 * fd_step, per_model)
        worst = max(worst, _hjb_max(model, X, ts, fd_step))
        worst_half = max(worst_half, _hjb_max(model, X, ts, fd_step / 2))
    ratio = worst / worst_half if worst_half > 0 else math.inf
    # negative control: precisions diffusing at twice the heat rate
    bad = random_model(stream(seed, "check", 2), 2, 4, cls=MistimedKernelModel, rate=2.0)
    r2 = stream(seed, "check", 3)
    Xb = bad.centers[r2.integers(0, 4, 50)] + r2.normal(0.0, 1.0, (50, 2))
    bad_res = _hjb_max(bad, Xb, r2.uniform(0.1, 0.9, 50), fd_step)
    return [
        _below("hjb max normalized residual", worst, 1e-4),
        CheckResult(
            "hjb second-order convergence (ratio when halving fd_step)",
            ratio,
            4.0,
            bool(3.0 <= ratio <= 5.0),
            "accepted range [3, 5]",
        ),
        CheckResult("hjb negative control residual", bad_res, 1e-2, bool(bad_res > 1e-2), "must exceed"),
    ]


# -- finite-difference gradients -----------------------------------------------


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def fd_score_error(model, X, h=1e-5):
    d = model.dim
    fd = np.zeros_like(X)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        fd[:, j] = (model.log_density(X + e) - model.log_density(X - e)) / (2 * h)
    return _rel(model.score(X), fd)


def fd_laplacian_error(model, X, h=1e-3):
    # Laplace(eta) / eta from second differences of eta / eta(x)
    d = model.dim
    base = model.log_density(X)
    lap = np.zeros(len(X))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        lp = np.exp(model.log_density(X + e) - base)
        lm = np.exp(model.log_density(X - e) - base)
        lap += (lp - 2.0 + lm) / (h * h)
    return _rel(model.laplacian_ratio(X), lap)


def fd_param_grad_error(model, batch, rng, n_coords=100, h=1e-6):
    """Tape gradient of the terminal ISM loss vs central FD on random coordinates."""
    provider = model.provider
    _, grads = ism_loss_and_grad(model, batch)
    flat_g = flatten(grads)
    theta = flatten(provider.params)
    coords = rng.choice(len(theta), min(n_coords, len(theta)), replace=False)
    fd = np.empty(len(coords))
    for k, c in enumerate(coords):
        vals = []
        for sgn in (1.0, -1.0):
            th = theta.copy()
            th[c] += sgn * h
            provider.params[:] = unflatten(th, provider.params)
            model.refresh()
            vals.append(terminal_ism_loss(model, batch))
        fd[k] = (vals[0] - vals[1]) / (2 * h)
    provider.params[:] = unflatten(theta, provider.params)
    model.refresh()
    return _rel(flat_g[coords], fd)


def gradcheck_suite(seed=0, n_points=100):
    rng = stream(seed, "check", 4)
    score_err = lap_err = 0.0
    for d in (1, 2, 3):
        model = random_model(rng, d, 5)
        X = model.centers[rng.integers(0, 5, n_points)] + rng.normal(0.0, 0.7, (n_points, d))
        score_err = max(score_err, fd_score_error(model, X))
        lap_err = max(lap_err, fd_laplacian_error(model, X))
    # 40 centers x 3 packed entries: at least 100 checked parameters
    table = random_model(rng, 2, 40)
    batch = table.centers[rng.integers(0, 40, 64)] + rng.normal(0.0, 0.7, (64, 2))
    table_err = fd_param_grad_error(table, batch, rng, n_coords=table.provider.params[0].size)
    centers = rng.normal(0.0, 1.0, (8, 2))
    mlp = KernelModel(centers, MlpProvider.init(2, seed, hidden=(16, 16)))
    mlp_err = fd_param_grad_error(mlp, batch, rng, n_coords=100)
    return [
        _below("score vs FD of log-density (rel)", score_err, 1e-5),
        _below("laplacian_ratio vs FD Laplacian (rel)", lap_err, 1e-4),
        _below("tape gradient vs FD, table provider (rel)", table_err, 1e-4),
        _below("tape gradient vs FD, mlp provider (rel)", mlp_err, 1e-4),
    ]


# -- dual-path equivalences ----------------------------------------------------


def lifted_equivalence_error(seed=0, n_models=10, n_points=1000):
    rng = stream(seed, "check", 5)
    worst = 0.0
    for k in range(n_models):
        d = int(rng.integers(1, 4))
        N = int(rng.integers(1, 9))
        model = random_model(rng, d, N)
        X = rng.normal(0.0, 2.0, (n_points, d))
        worst = max(worst, float(np.max(np.abs(lifted_score(assemble(model), X) - model.score(X)))))
    return worst


def earlystop_bridge_error(seed=0, eps=0.05, beta=1.0, n_train=200, n_points=1000):
    """Empirical score at ``s = eps`` vs the isotropic kernel model at ``s = 0``."""
    rng = stream(seed, "check", 6)
    train = rng.normal(0.0, 1.0, (n_train, 2))
    X = rng.normal(0.0, 1.5, (n_points, 2))
    es = EmpiricalScore(train, beta=beta)
    iso = isotropic_model(train, eps, beta=beta)
    return float(np.max(np.abs(es.score(X, eps) - iso.score(X, 0.0))))


def equiv_suite(seed=0):
    return [
        _below("lifted score vs kernel score (max abs)", lifted_equivalence_error(seed), 1e-10),
        _below("empirical score at eps vs isotropic model (max abs)", earlystop_bridge_error(seed), 1e-10),
    ]


# -- heat closure --------------------------------------------------------------


def heat_closure_error(model, s, test_points, n_grid=40001):
    """1-D: ``exp(log_density(., s))`` vs trapezoid quadrature of ``G * pi``."""
    if model.dim != 1:
        raise ValueError("heat closure oracle is 1-D")
    spread = math.sqrt(float(np.max(model.covariances)) + model.beta**2 * s)
    lo = float(model.centers.min()) - 14.0 * spread
    hi = float(model.centers.max()) + 14.0 * spread
    grid = np.linspace(lo, hi, n_grid)
    w = trapezoid_weights(grid) * np.exp(model.log_density(grid[:, None], 0.0))
    x = np.asarray(test_points, dtype=float).reshape(-1)
    G = heat_kernel(model.beta**2 / 2.0, s, x[:, None, None], grid[None, :, None])
    quad = G @ w
    exact = np.exp(model.log_density(x[:, None], s))
    return float(np.max(np.abs(quad - exact)))


def heat_suite(seed=0):
    rng = stream(seed, "check", 7)
    model = random_model(rng, 1, 4)
    x = np.linspace(model.centers.min() - 2.0, model.centers.max() + 2.0, 50)
    worst = max(heat_closure_error(model, s, x) for s in (0.1, 0.5, 1.0))
    return [_below("heat closure vs quadrature (max abs), s in {0.1, 0.5, 1}", worst, 1e-6)]


def run_suites(names, seed=0, corrupt=False):
    hjb = (lambda sd: hjb_suite(sd, rate=2.0)) if corrupt else hjb_suite
    fns = {"hjb": hjb, "gradcheck": gradcheck_suite, "equiv": equiv_suite, "heat": heat_suite}
    out = {}
    for name in names:
        if name not in fns:
            raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}, all")
        out[name] = fns[name](seed)
    return out
