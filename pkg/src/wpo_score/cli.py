"""Command-line entry point: ``wpo-score <command> [flags]``.

Exit codes: 0 ok, 1 property failure, 2 usage or configuration error,
3 numerical abort. ``--config run.json`` replays a JSON document holding
``command`` plus one key per flag (dashes become underscores); unknown keys
are rejected.
"""

import argparse
import json
import logging
import sys

import numpy as np

from . import io
from .datasets import ConfigError, DatasetSpec, generate, read_csv, subsample_centers, write_csv
from .training import NumericalAbort, TrainConfig, train
from .samplers import SamplerAbort, SdeConfig, init_from_prior, sample_direct, sample_reverse_sde

log = logging.getLogger("wpo_score")

EXIT_OK, EXIT_PROPERTY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    """Bad flag combination or missing input; exit code 2."""


def _fmt(v):
    return "%.17g" % v


def _write_rows(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else _fmt(v) for v in row) + "\n")


def _csv_floats(text, name):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{name} expects comma-separated numbers, got {text!r}")


def _load_points(path, flag):
    if not path:
        raise UsageError(f"--{flag} is required")
    try:
        return read_csv(path)
    except OSError as exc:
        raise UsageError(f"cannot read --{flag} {path}: {exc}")


def _load_model(path):
    if not path:
        raise UsageError("--model is required")
    try:
        return io.load_model(path)
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot load model {path}: {exc}")


# -- subcommands ----------------------------------------------------------------


def cmd_datagen(args):
    try:
        spec = DatasetSpec(args.dataset, args.n, args.noise, args.seed)
    except ConfigError as exc:
        raise UsageError(str(exc))
    write_csv(generate(spec).points, args.out, header=args.header)
    return EXIT_OK


def cmd_train(args):
    from .precision import init_params

    data = _load_points(args.data, "data")
    heldout = read_csv(args.heldout) if args.heldout else None
    try:
        centers = subsample_centers(data, args.centers, args.seed)
        config = TrainConfig(
            steps=args.steps,
            batch_size=args.batch,
            learning_rate=args.lr,
            optimizer=args.optimizer,
            seed=args.seed,
            eval_every=args.eval_every,
        )
        provider = init_params(args.provider, args.seed, centers, beta=args.beta)
    except ValueError as exc:
        raise UsageError(str(exc))
    model, report = train(data, centers, provider, config, args.beta, args.horizon, heldout=heldout)
    io.save_model(model, args.out)
    if args.report:
        report.write_csv(args.report)
    return EXIT_OK


def cmd_sample(args):
    from .baselines import EmpiricalScore

    if args.n < 0:
        raise UsageError("--n must be >= 0")
    train_pts = read_csv(args.train_data) if args.train_data else None
    if args.score == "empirical":
        if train_pts is None:
            raise UsageError("--score empirical needs --train-data")
        if args.mode != "sde":
            raise UsageError("the empirical field only supports --mode sde")
        if args.eps_stop <= 0:
            raise UsageError("--eps-stop must be > 0 for the empirical field (singular at s = 0)")
        field = EmpiricalScore(train_pts, args.beta, args.horizon)
    else:
        field = _load_model(args.model)
    d = field.dim
    if args.n == 0:
        write_csv(np.zeros((0, d)), args.out)
        return EXIT_OK
    is_kernel = hasattr(field, "covariances")
    if args.mode == "direct":
        if not is_kernel:
            raise UsageError("--mode direct needs a kernel model")
        pts = sample_direct(field, args.n, args.seed)
    else:
        cfg = SdeConfig(args.steps, args.eps_stop, args.seed)
        try:
            cfg.check(field.horizon)
        except ValueError as exc:
            raise UsageError(str(exc))
        if not is_kernel and train_pts is None and not hasattr(field, "trainset"):
            raise UsageError("SDE sampling of a score net needs --train-data for the prior")
        init = init_from_prior(field, args.n, args.seed, reference=train_pts)
        pts = sample_reverse_sde(field, init, cfg)
    write_csv(pts, args.out)
    return EXIT_OK


def cmd_density(args):
    model = _load_model(args.model)
    if not hasattr(model, "log_density") or model.dim != 2:
        raise UsageError("density grids need a 2-D kernel model")
    g = _csv_floats(args.grid, "grid")
    if len(g) != 6:
        raise UsageError("--grid is xmin,xmax,ymin,ymax,nx,ny")
    nx, ny = int(g[4]), int(g[5])
    if nx < 1 or ny < 1 or nx != g[4] or ny != g[5]:
        raise UsageError("nx and ny must be positive integers")
    if not 0.0 <= args.s <= model.horizon:
        raise UsageError(f"--s must lie in [0, {model.horizon}]")
    xs = np.linspace(g[0], g[1], nx)
    ys = np.linspace(g[2], g[3], ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    dens = np.exp(model.log_density(pts, args.s))
    _write_rows(args.out, ["x", "y", "density"], np.column_stack([pts, dens]))
    return EXIT_OK


def cmd_ellipses(args):
    from .metrics import ellipses, write_ellipses_csv

    model = _load_model(args.model)
    if not hasattr(model, "covariances") or model.dim != 2:
        raise UsageError("ellipses need a 2-D kernel model")
    if not 0 <= args.k <= model.n_centers:
        raise UsageError(f"--k must lie in [0, {model.n_centers}]")
    write_ellipses_csv(ellipses(model, args.k, args.seed), args.out)
    return EXIT_OK


def cmd_eval(args):
    from .metrics import MetricReport, mmd2_unbiased, nll, nn_median_ratio

    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(wanted) - {"nll", "mmd", "nn"}
    if unknown:
        raise UsageError(f"unknown metrics {sorted(unknown)}")
    report = MetricReport()
    if wanted:
        test = _load_points(args.test, "test")
        report.sizes["test"] = len(test)
    if "nll" in wanted:
        model = _load_model(args.model)
        if not hasattr(model, "log_density"):
            raise UsageError("nll needs a kernel model")
        report.nll = nll(model, test)
    if "mmd" in wanted or "nn" in wanted:
        gen = _load_points(args.gen, "gen")
        report.sizes["gen"] = len(gen)
    if "mmd" in wanted:
        report.mmd2 = mmd2_unbiased(gen, test, "median", args.seed)
        report.seeds["mmd"] = args.seed
    if "nn" in wanted:
        train_pts = _load_points(args.train, "train")
        report.sizes["train"] = len(train_pts)
        try:
            report.nn_median_ratio = nn_median_ratio(gen, test, train_pts)
        except ValueError as exc:
            raise UsageError(str(exc))
    io.dump(report.to_dict(), args.out)
    return EXIT_OK


def compare_earlystop(model, train_pts, test, eps_list, seed=0, n_samples=None):
    """Rows ``(label, eps, nll, mmd2)`` for isotropic models and the trained model."""
    from .baselines import isotropic_model
    from .metrics import mmd2_unbiased, nll

    n = n_samples or len(test)
    rows = []
    for k, eps in enumerate(eps_list):
        iso = isotropic_model(train_pts, eps, model.beta, model.horizon)
        gen = sample_direct(iso, n, seed + k + 1)
        rows.append(("isotropic", eps, nll(iso, test), mmd2_unbiased(gen, test, "median", seed)))
    gen = sample_direct(model, n, seed)
    rows.append(("wpo", float("nan"), nll(model, test), mmd2_unbiased(gen, test, "median", seed)))
    return rows


def cmd_compare_earlystop(args):
    eps = _csv_floats(args.eps, "eps")
    if not eps or any(e <= 0 for e in eps):
        raise UsageError("--eps needs at least one positive value")
    train_pts = _load_points(args.data, "data")
    test = _load_points(args.test, "test")
    model = _load_model(args.model)
    if not hasattr(model, "log_density"):
        raise UsageError("--model must be a kernel model")
    rows = compare_earlystop(model, train_pts, test, eps, args.seed)
    _write_rows(args.out, ["model", "eps", "nll", "mmd2"], rows)
    return EXIT_OK


def cmd_check(args):
    from .checks import SUITES, run_suites

    names = [s.strip() for s in args.suite.split(",") if s.strip()]
    if "all" in names:
        names = list(SUITES)
    bad = [s for s in names if s not in SUITES]
    if bad or not names:
        raise UsageError(f"unknown suite(s) {bad}; choose from {', '.join(SUITES)}, all")
    results = run_suites(names, args.seed, corrupt=args.corrupt)
    failed = []
    for name in names:
        for r in results[name]:
            print(f"[{name}] {r.line()}")
            if not r.passed:
                failed.append(r.name)
    if failed:
        print("failing properties: " + "; ".join(failed))
        return EXIT_PROPERTY
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="wpo-score", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="replay a JSON run config")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    q = sub.add_parser("datagen", help="write a seeded toy dataset")
    q.add_argument("--dataset", required=True)
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--noise", type=float, default=0.0)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.add_argument("--header", action="store_true")
    q.set_defaults(func=cmd_datagen)

    q = sub.add_parser("train", help="fit a kernel model by terminal ISM")
    q.add_argument("--data", required=True)
    q.add_argument("--heldout")
    q.add_argument("--centers", type=int, required=True)
    q.add_argument("--provider", choices=("table", "mlp"), default="mlp")
    q.add_argument("--steps", type=int, default=1000)
    q.add_argument("--batch", type=int, default=64)
    q.add_argument("--lr", type=float, default=1e-3)
    q.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    q.add_argument("--eval-every", type=int, default=0)
    q.add_argument("--beta", type=float, default=1.0)
    q.add_argument("--horizon", type=float, default=1.0)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.add_argument("--report")
    q.set_defaults(func=cmd_train)

    q = sub.add_parser("sample", help="draw samples directly or by reverse SDE")
    q.add_argument("--model")
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--mode", choices=("direct", "sde"), default="direct")
    q.add_argument("--steps", type=int, default=1000)
    q.add_argument("--eps-stop", type=float, default=1e-3)
    q.add_argument("--score", choices=("model", "empirical"), default="model")
    q.add_argument("--train-data")
    q.add_argument("--beta", type=float, default=1.0, help="empirical field only")
    q.add_argument("--horizon", type=float, default=1.0, help="empirical field only")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_sample)

    q = sub.add_parser("density", help="density on a 2-D grid")
    q.add_argument("--model", required=True)
    q.add_argument("--grid", required=True, help="xmin,xmax,ymin,ymax,nx,ny (write --grid=-2,... for negatives)")
    q.add_argument("--s", type=float, default=0.0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_density)

    q = sub.add_parser("ellipses", help="covariance ellipses at seeded centers")
    q.add_argument("--model", required=True)
    q.add_argument("--k", type=int, required=True)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_ellipses)

    q = sub.add_parser("eval", help="NLL, MMD^2 and NN memorization ratio")
    q.add_argument("--model")
    q.add_argument("--test")
    q.add_argument("--train")
    q.add_argument("--gen")
    q.add_argument("--metrics", default="nll,mmd,nn")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_eval)

    q = sub.add_parser("compare-earlystop", help="trained model vs isotropic early-stopping models")
    q.add_argument("--data", required=True)
    q.add_argument("--test", required=True)
    q.add_argument("--model", required=True)
    q.add_argument("--eps", default="0.05,0.1,0.2")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_compare_earlystop)

    q = sub.add_parser("check", help="run the built-in property suites")
    q.add_argument("--suite", default="all")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--corrupt", action="store_true", help="run hjb on a mistimed model (must fail)")
    q.set_defaults(func=cmd_check)
    return p


def config_to_argv(doc, parser):
    """Turn a JSON run config into the equivalent argument list."""
    if not isinstance(doc, dict) or "command" not in doc:
        raise UsageError("config must be a JSON object with a 'command' key")
    command = doc["command"]
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    if command not in subs.choices:
        raise UsageError(f"unknown command {command!r} in config")
    actions = {a.dest: a for a in subs.choices[command]._actions if a.option_strings and a.dest != "help"}
    unknown = sorted(set(doc) - set(actions) - {"command"})
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {unknown}")
    argv = [command]
    for key, value in doc.items():
        if key == "command" or value is None:
            continue
        flag = actions[key].option_strings[-1]
        if isinstance(actions[key], argparse._StoreTrueAction):
            if not isinstance(value, bool):
                raise UsageError(f"config key {key!r} must be true or false")
            if value:
                argv.append(flag)
        else:
            # "--flag=value" keeps values such as "-2,3,..." from parsing as flags
            argv.append(f"{flag}={value if isinstance(value, str) else json.dumps(value)}")
    return argv


def main(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.config:
            if args.command:
                raise UsageError("--config replaces the subcommand; give one or the other")
            try:
                with open(args.config) as fh:
                    doc = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config {args.config}: {exc}")
            try:
                args = parser.parse_args(config_to_argv(doc, parser))
            except SystemExit as exc:
                return EXIT_USAGE if exc.code else EXIT_OK
        if not args.command:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"wpo-score: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalAbort as exc:
        print(f"wpo-score: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SamplerAbort as exc:
        print(f"wpo-score: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
