"""Command-line interface: ``gampclass <subcommand> [options]``.

Every option may also come from an INI file passed with ``--config``; keys
in the section named after the subcommand (dashes or underscores) become
defaults, and explicit command-line flags win.  Exit status is 0 on
success, 1 for usage or input errors and 2 when the iteration diverges.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .channels import ConfigurationError
from .data import (
    ParseError,
    class_conditional_test,
    flip_labels,
    gen_class_conditional,
    gen_probit_data,
    gen_sparse_weights,
    read_dataset,
    write_dataset,
)
from .em import EMDivergence
from .engine import GampDivergence, write_trace_csv
from .estimator import ACTIVATIONS, PRIORS, GAMPClassifier, OneBitCSClassifier
from .metrics import density, error_rate
from .parallel import n_workers
from . import experiments as exp
from .xval import grid_search, log_grid

logger = logging.getLogger("gampclass")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# argument helpers


def _floats(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in str(text).split(",") if t.strip()]


def _names(text):
    return tuple(t.strip() for t in str(text).split(",") if t.strip())


def _parse_grid(specs):
    """``name=lo:hi:size`` (log spaced) or ``name=v1,v2,...``."""
    grid = {}
    for spec in specs or ():
        if "=" not in spec:
            raise UsageError(f"grid spec {spec!r} must look like name=lo:hi:size or name=v1,v2")
        name, rhs = spec.split("=", 1)
        name = name.strip()
        if ":" in rhs:
            parts = rhs.split(":")
            if len(parts) != 3:
                raise UsageError(f"log grid {spec!r} needs lo:hi:size")
            vals = log_grid(float(parts[0]), float(parts[1]), int(parts[2]))
        else:
            vals = _floats(rhs)
        if name == "K":
            vals = [int(round(v)) for v in vals]
        if not vals:
            raise UsageError(f"grid for {name!r} is empty")
        grid[name] = vals
    return grid


def _add_model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--activation", choices=ACTIVATIONS, default="probit")
    g.add_argument("--prior", choices=PRIORS, default="spike_slab")
    g.add_argument("--mode", choices=("sum_product", "max_sum"), default="sum_product")
    g.add_argument("--v", type=float, default=1.0, help="probit noise variance")
    g.add_argument("--alpha", type=float, default=1.0, help="logistic scale")
    g.add_argument("--gamma", type=float, default=None, help="label-flip probability (enables the robust model)")
    g.add_argument("--pi", type=float, default=0.1, help="spike-and-slab activity")
    g.add_argument("--mu", type=float, default=0.0, help="(slab) Gaussian mean")
    g.add_argument("--sigma2", type=float, default=1.0, help="(slab) Gaussian variance")
    g.add_argument("--lambda1", type=float, default=1.0)
    g.add_argument("--lambda2", type=float, default=0.0)
    g.add_argument("--tune", type=_names, default=(), help="comma-separated parameters learned by EM")
    g.add_argument("--em-iters", type=int, default=5)
    g.add_argument("--cadence", choices=("auto", "per_iteration", "per_run"), default="auto")
    g.add_argument("--damping", type=float, default=0.9)
    g.add_argument("--max-iter", type=int, default=200)
    g.add_argument("--tol", type=float, default=1e-3)


def _estimator(args, **overrides):
    params = dict(activation=args.activation, prior=args.prior, mode=args.mode, v=args.v,
                  alpha=args.alpha, gamma=args.gamma, pi=args.pi, mu=args.mu, sigma2=args.sigma2,
                  lambda1=args.lambda1, lambda2=args.lambda2, tune=tuple(args.tune),
                  em_iters=args.em_iters, cadence=args.cadence, damping=args.damping,
                  max_iter=args.max_iter, tol=args.tol)
    params.update(overrides)
    return GAMPClassifier(**params)


def _load(path, n_features=None):
    if not Path(path).exists():
        raise UsageError(f"no such file: {path}")
    data = read_dataset(path, n_features)
    if data.X.shape[0] == 0:
        raise UsageError(f"{path} holds no examples")
    return data


def _emit_report(report, args):
    for k, v in report.items():
        print(f"{k:>20}: {v}")
    if getattr(args, "report_json", None):
        with open(args.report_json, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if getattr(args, "report_csv", None):
        exp.write_rows(args.report_csv, [report], sorted(report))


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args):
    data = _load(args.data)
    est = _estimator(args)
    t0 = time.perf_counter()
    try:
        est.fit(data.X, data.y)
    except GampDivergence as exc:
        trace = args.trace or (str(args.model) + ".trace.csv")
        write_trace_csv(trace, exc.trace)
        print(f"error: {exc} (trace written to {trace})", file=sys.stderr)
        return EXIT_NUMERIC
    t_tune = time.perf_counter() - t0
    post = t_tune
    if est.tune:
        # refit with the learned parameters frozen; this run is the post-tuning cost
        frozen = _estimator(args, tune=(), **_theta_overrides(est))
        t1 = time.perf_counter()
        frozen.fit(data.X, data.y)
        post = time.perf_counter() - t1
        est = _merge_fit(est, frozen)
    total = time.perf_counter() - t0
    est.save(args.model)
    report = {"n_examples": int(data.X.shape[0]), "n_features": int(data.X.shape[1]),
              "train_error": error_rate(_pm(data.y, est), _pm(est.predict(data.X), est)),
              "density": density(est.coef_), "K_hat": est.n_selected_,
              "converged": est.converged_, "iterations": est.n_iter_,
              "total_runtime": total, "post_tuning_runtime": post,
              "theta": json.dumps(est.to_dict()["theta"], sort_keys=True)}
    if args.test:
        test = _load(args.test, data.X.shape[1])
        err = error_rate(_pm(test.y, est), _pm(est.predict(test.X), est))
        report.update(test_error=err, accuracy=1.0 - err)
    if args.trace:
        write_trace_csv(args.trace, est.trace_)
    _emit_report(report, args)
    return EXIT_OK


def _pm(labels, est):
    labels = np.asarray(labels)
    if set(np.unique(labels)) <= {-1.0, 1.0}:
        return labels
    return np.where(labels == est.classes_[1], 1.0, -1.0)


def _theta_overrides(est):
    """Learned scalar parameters as estimator keyword arguments."""
    rename = {"slab_mu": "mu", "slab_sigma2": "sigma2"}
    return {rename.get(k, k): v for k, v in est.theta_.items()
            if np.isscalar(v) and rename.get(k, k) in est.get_params()}


def _merge_fit(tuned, frozen):
    frozen.tune = tuned.tune
    frozen.theta_ = tuned.theta_
    frozen.em_flags_ = tuned.em_flags_
    return frozen


def cmd_predict(args):
    if not Path(args.model).exists():
        raise UsageError(f"no such model file: {args.model}")
    est = GAMPClassifier.load(args.model)
    data = _load(args.data, est.n_features_in_)
    labels = est.predict(data.X)
    proba = est.predict_proba(data.X)[:, 1]
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write("label,prob_positive\n")
        for lab, p in zip(labels, proba):
            out.write(f"{lab:g},{float(p)!r}\n")
    finally:
        if args.out:
            out.close()
    err = error_rate(_pm(data.y, est), _pm(labels, est))
    print(f"test_error: {err}\naccuracy: {1 - err}", file=sys.stderr)
    return EXIT_OK


def cmd_xval(args):
    data = _load(args.data)
    grid = _parse_grid(args.grid)
    if not grid:
        raise UsageError("xval needs at least one --grid")
    if args.onebit:
        if set(grid) != {"K"}:
            raise UsageError("OneBitCS cross-validation takes a single grid over K")
        est = OneBitCSClassifier()
    else:
        est = _estimator(args)
        bad = set(grid) - set(est.get_params())
        if bad:
            raise UsageError(f"unknown grid parameter(s): {sorted(bad)}")
    t0 = time.perf_counter()
    res = grid_search(est, data.X, data.y, grid, args.folds, args.seed, n_workers())
    t_cv = time.perf_counter() - t0
    final = est.set_params(**res.best_params)
    t1 = time.perf_counter()
    final.fit(data.X, data.y)
    post = time.perf_counter() - t1
    report = {"best_params": json.dumps(res.best_params, sort_keys=True),
              "cv_error": float(res.mean_error[res.best_index]),
              "n_classifiers": res.n_classifiers, "jaccard": res.jaccard,
              "K_hat": final.n_selected_, "density": density(final.coef_),
              "total_runtime": t_cv + post, "post_tuning_runtime": post,
              "failed_folds": len(res.notes)}
    if args.test:
        test = _load(args.test, data.X.shape[1])
        err = error_rate(_pm(test.y, final), _pm(final.predict(test.X), final))
        report.update(test_error=err, accuracy=1.0 - err)
    if args.model and not args.onebit:
        final.save(args.model)
    _emit_report(report, args)
    return EXIT_OK


def _sweep_grid(args):
    if args.points:
        pts = []
        for tok in args.points.split(","):
            d, r = tok.split(":")
            pts.append((float(d), float(r)))
        return pts
    deltas = np.linspace(args.delta_min, args.delta_max, args.size)
    rhos = np.linspace(args.rho_min, args.rho_max, args.size)
    return [(float(d), float(r)) for r in rhos for d in deltas]


PLOT_STUB = """# gnuplot stub: level curves of the predicted test error
set datafile separator ','
set xlabel 'M/N'; set ylabel 'K/N'
set dgrid3d {n},{n}; set contour base; unset surface; set view map
splot '{csv}' using 1:2:4 skip 1 with lines title 'predicted error'
"""


def cmd_sweep(args):
    from .state_evolution import SWEEP_COLUMNS, SweepConfig, se_phase_sweep
    grid = _sweep_grid(args)
    cfg = SweepConfig(N=args.N, v=args.v, mc_samples=args.mc_samples, se_iters=args.se_iters,
                      trials=args.trials, seed=args.seed)
    rows = se_phase_sweep(grid, cfg, n_workers())
    exp.write_rows(args.out, rows, SWEEP_COLUMNS)
    if args.plot_script:
        Path(args.plot_script).write_text(PLOT_STUB.format(n=max(2, args.size), csv=args.out))
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_synth(args):
    rng = np.random.default_rng(args.seed)
    if args.kind == "probit":
        truth = gen_sparse_weights(args.N, args.K, args.amplitude, rng)
        data = gen_probit_data(truth, args.M, args.feature_var, args.v, rng)
    else:
        truth = None
        if args.K is not None and args.K < args.N:
            truth = gen_sparse_weights(args.N, args.K, "pm_one", rng)
        data, truth = gen_class_conditional(args.N, args.M, args.eps_bayes, True, rng, truth)
    if args.flip:
        y, beta = flip_labels(data.y, args.flip, rng)
        data = type(data)(data.X, y)
        truth.params["gamma"] = args.flip
        truth.params["beta"] = beta.astype(int).tolist()
    write_dataset(args.out, data)
    truth_path = args.truth or (str(args.out) + ".truth.json")
    Path(truth_path).write_text(truth.to_json())
    if args.test_out:
        T = args.test_size
        if truth.model == "class-conditional":
            test = class_conditional_test(truth, T, rng)
        else:
            test = gen_probit_data(truth, T, args.feature_var, args.v, rng)
        write_dataset(args.test_out, test)
    print(f"wrote {data.X.shape[0]}x{data.X.shape[1]} dataset to {args.out}, truth to {truth_path}")
    return EXIT_OK


def cmd_reproduce(args):
    workers = n_workers()
    if args.figure == "fig2":
        grid = exp.FIG2_GRID if not args.points else _sweep_grid(args)
        rows = exp.fig2(grid, N=args.N or 1024, trials=args.trials if args.trials is not None else 200,
                        mc_samples=args.mc_samples, seed=args.seed, workers=workers)
        from .state_evolution import SWEEP_COLUMNS
        exp.write_rows(args.out, rows, SWEEP_COLUMNS)
        summary = rows
    elif args.figure == "fig3":
        cfg = exp.Fig3Config()
        kw = {}
        if args.trials is not None:
            kw["trials"] = args.trials
        if args.K:
            kw["Ks"] = tuple(args.K)
        if args.N:
            kw["N"] = args.N
        if args.M:
            kw["M"] = args.M
        if args.methods:
            kw["methods"] = tuple(args.methods)
        cfg = replace(cfg, **kw)
        rows = exp.fig3(cfg, args.seed, workers)
        exp.write_rows(args.out, rows, exp.FIG3_COLUMNS)
        summary = exp.summarize(rows, ["K", "method"], ["error", "K_hat"])
    else:
        cfg = exp.Fig4Config()
        kw = {}
        if args.trials is not None:
            kw["trials"] = args.trials
        if args.gammas:
            kw["gammas"] = tuple(args.gammas)
        if args.N:
            kw["N"] = args.N
        if args.M:
            kw["M"] = args.M
        if args.methods:
            kw["methods"] = tuple(args.methods)
        cfg = replace(cfg, **kw)
        rows = exp.fig4(cfg, args.seed, workers)
        exp.write_rows(args.out, rows, exp.FIG4_COLUMNS)
        summary = exp.summarize(rows, ["gamma", "method"], ["test_error"])
    if args.summary:
        exp.write_rows(args.summary, summary)
    exp.write_rows(sys.stdout, summary)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = _Parser(prog="gampclass", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="INI file with per-subcommand defaults")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="fit a classifier and save the model")
    t.add_argument("--data", required=True)
    t.add_argument("--test")
    t.add_argument("--model", required=True, help="output model file (JSON)")
    t.add_argument("--trace", help="per-iteration trace CSV (written on divergence too)")
    t.add_argument("--report-json")
    t.add_argument("--report-csv")
    t.add_argument("--seed", type=int, default=0)
    _add_model_args(t)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="label a dataset with a saved model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_predict)

    x = sub.add_parser("xval", help="K-fold grid search")
    x.add_argument("--data", required=True)
    x.add_argument("--test")
    x.add_argument("--grid", action="append", help="name=lo:hi:size (log spaced) or name=v1,v2,...")
    x.add_argument("--folds", type=int, default=2)
    x.add_argument("--onebit", action="store_true", help="cross-validate the OneBitCS baseline over K")
    x.add_argument("--model")
    x.add_argument("--report-json")
    x.add_argument("--report-csv")
    x.add_argument("--seed", type=int, default=0)
    _add_model_args(x)
    x.set_defaults(func=cmd_xval)

    s = sub.add_parser("sweep", help="state-evolution phase-plane sweep")
    s.add_argument("--out", required=True)
    s.add_argument("--points", help="explicit grid as d1:r1,d2:r2,...")
    s.add_argument("--delta-min", type=float, default=0.1)
    s.add_argument("--delta-max", type=float, default=0.6)
    s.add_argument("--rho-min", type=float, default=0.01)
    s.add_argument("--rho-max", type=float, default=0.1)
    s.add_argument("--size", type=int, default=5)
    s.add_argument("--N", type=int, default=1024)
    s.add_argument("--v", type=float, default=0.01)
    s.add_argument("--mc-samples", type=int, default=100_000)
    s.add_argument("--se-iters", type=int, default=50)
    s.add_argument("--trials", type=int, default=0, help="empirical GAMP trials per point")
    s.add_argument("--plot-script")
    s.add_argument("--seed", type=int, required=True)
    s.set_defaults(func=cmd_sweep)

    y = sub.add_parser("synth", help="generate a synthetic dataset and truth sidecar")
    y.add_argument("--kind", choices=("probit", "class-conditional"), default="probit")
    y.add_argument("--N", type=int, required=True)
    y.add_argument("--M", type=int, required=True)
    y.add_argument("--K", type=int)
    y.add_argument("--amplitude", choices=("pm_one", "gaussian"), default="pm_one")
    y.add_argument("--feature-var", type=float, default=1.0)
    y.add_argument("--v", type=float, default=0.0, help="probit noise variance")
    y.add_argument("--eps-bayes", type=float, default=0.05)
    y.add_argument("--flip", type=float, default=0.0, help="label-flip probability")
    y.add_argument("--out", required=True)
    y.add_argument("--truth")
    y.add_argument("--test-out")
    y.add_argument("--test-size", type=int, default=1024)
    y.add_argument("--seed", type=int, required=True)
    y.set_defaults(func=cmd_synth)

    r = sub.add_parser("reproduce", help="rerun a synthetic experiment")
    r.add_argument("figure", choices=("fig2", "fig3", "fig4"))
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--out", required=True, help="per-trial CSV")
    r.add_argument("--summary", help="grouped means CSV")
    r.add_argument("--trials", type=int)
    r.add_argument("--K", type=_ints, help="fig3 sparsities")
    r.add_argument("--gammas", type=_floats, help="fig4 mislabeling probabilities")
    r.add_argument("--methods", type=_names)
    r.add_argument("--N", type=int)
    r.add_argument("--M", type=int)
    r.add_argument("--points", help="fig2 grid as d1:r1,d2:r2,...")
    r.add_argument("--mc-samples", type=int, default=100_000)
    r.set_defaults(func=cmd_reproduce)
    return p


def _config_defaults(parser, argv):
    """Apply INI defaults for the chosen subcommand before the real parse."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    if not Path(known.config).exists():
        raise UsageError(f"no such config file: {known.config}")
    ini = configparser.ConfigParser()
    ini.read(known.config)
    command = next((a for a in rest if not a.startswith("-")), None)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    if command not in subparsers.choices or not ini.has_section(command):
        return
    sp = subparsers.choices[command]
    dests = {a.dest: a for a in sp._actions}
    values = {}
    for key, raw in ini.items(command):
        dest = key.replace("-", "_")
        if dest not in dests:
            raise UsageError(f"unknown key {key!r} in section [{command}] of {known.config}")
        action = dests[dest]
        if isinstance(action, argparse._StoreTrueAction):
            values[dest] = ini.getboolean(command, key)
        elif action.type is not None:
            values[dest] = action.type(raw)
        else:
            values[dest] = raw
        # a config value satisfies a required flag
        action.required = False
    sp.set_defaults(**values)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _config_defaults(parser, argv)
    except (UsageError, ValueError, configparser.Error) as exc:
        print(f"gampclass: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        n_workers()
        return args.func(args)
    except (GampDivergence, EMDivergence, FloatingPointError) as exc:
        print(f"gampclass: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigurationError, ParseError, ValueError, OSError) as exc:
        print(f"gampclass: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
