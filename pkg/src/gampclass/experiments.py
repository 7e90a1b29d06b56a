"""Desk-scale drivers for the three synthetic experiments.

Each driver returns plain row dictionaries (one per trial and method) so
that the CLI can write them as CSV; every random stream is derived from a
single integer seed, so a rerun with the same seed gives identical rows.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .channels import (GaussianPrior, HingeChannel, LogisticChannel, ProbitChannel, RobustChannel,
                       SpikeSlabPrior)
from .data import Dataset, class_conditional_test, flip_labels, gen_class_conditional, gen_sparse_weights
from .em import EMConfig, em_fit
from .engine import GampConfig, GampDivergence, one_bit_cs
from .estimator import OneBitCSClassifier
from .metrics import closed_form_error, error_rate, estimated_support
from .parallel import child_seeds, pmap
from .state_evolution import SweepConfig, se_phase_sweep
from .xval import grid_search, radius_grid

# ---------------------------------------------------------------------------
# phase plane


FIG2_GRID = ((0.2, 0.02), (0.4, 0.05), (0.6, 0.10))


def fig2(grid: Sequence[Tuple[float, float]] = FIG2_GRID, N=1024, trials=200, mc_samples=100_000,
         v=0.01, seed=0, workers=None):
    """State-evolution prediction next to the empirical ensemble average."""
    cfg = SweepConfig(N=N, v=v, mc_samples=int(mc_samples), trials=trials, seed=seed)
    return se_phase_sweep(grid, cfg, workers)


# ---------------------------------------------------------------------------
# sparsity / accuracy trade-off


FIG3_METHODS = ("BG-PR", "BG-LR", "BG-HL", "OneBitCS")
FIG3_COLUMNS = ["K", "trial", "method", "error", "K_hat", "K_correct", "converged"]


@dataclass(frozen=True)
class Fig3Config:
    N: int = 30000
    M: int = 300
    Ks: Tuple[int, ...] = (5, 10, 15, 20, 25, 30)
    trials: int = 50
    eps_bayes: float = 0.05
    methods: Tuple[str, ...] = FIG3_METHODS
    #: initial spike-slab activity; None starts at K/N
    pi0: float = None
    v0: float = 1.0
    alpha0: float = 1.0
    onebit_radius: int = 10
    onebit_folds: int = 2
    gamp: GampConfig = GampConfig(damping=0.5, max_iter=300)


def _bg_em(data, method, K, cfg: Fig3Config):
    pi0 = K / cfg.N if cfg.pi0 is None else cfg.pi0
    prior = SpikeSlabPrior(pi0, GaussianPrior(0.0, 1.0))
    if method == "BG-PR":
        out, tuned = ProbitChannel(cfg.v0), {"pi", "v"}
    elif method == "BG-LR":
        out, tuned = LogisticChannel(cfg.alpha0), {"pi", "alpha"}
    elif method == "BG-HL":
        out, tuned = HingeChannel(), {"pi"}
    else:
        raise ValueError(f"unknown method {method!r}")
    res = em_fit(data, out, prior, tuned, EMConfig(gamp=cfg.gamp))
    support = estimated_support(res.result.nonzero_prob)
    return res.result.w_hat, support, bool(res.result.converged)


def _onebit_cv(data, K, cfg: Fig3Config, seed):
    grid = {"K": radius_grid(K, cfg.onebit_radius, data.X.shape[1])}
    cv = grid_search(OneBitCSClassifier(), data.X, data.y, grid, cfg.onebit_folds, seed, workers=1)
    w = one_bit_cs(data, cv.best_params["K"])
    return w, set(np.flatnonzero(w).tolist()), True


def _fig3_trial(args):
    K, trial, seed, cfg = args
    rng = np.random.default_rng(seed)
    truth = gen_sparse_weights(cfg.N, K, "pm_one", rng)
    data, truth = gen_class_conditional(cfg.N, cfg.M, cfg.eps_bayes, True, rng, truth)
    v = truth.params["v"]
    true_support = set(np.flatnonzero(truth.w_true).tolist())
    rows = []
    for method in cfg.methods:
        row = {"K": K, "trial": trial, "method": method}
        try:
            if method == "OneBitCS":
                w, support, conv = _onebit_cv(data, K, cfg, seed)
            else:
                w, support, conv = _bg_em(data, method, K, cfg)
            err = closed_form_error(truth.w_true, w, v) if np.any(w) else 0.5
            row.update(error=err, K_hat=len(support), K_correct=len(support & true_support),
                       converged=int(conv))
        except (GampDivergence, FloatingPointError) as exc:
            row.update(error=float("nan"), K_hat=-1, K_correct=-1, converged=f"diverged: {exc}")
        rows.append(row)
    return rows


def fig3(cfg: Fig3Config = Fig3Config(), seed=0, workers=None) -> List[dict]:
    """Closed-form test error and estimated sparsity for every (K, trial, method)."""
    tasks = []
    for K in cfg.Ks:
        if not 1 <= K <= cfg.N:
            raise ValueError(f"K={K} outside [1, N]")
        for trial, s in enumerate(child_seeds([seed, K], cfg.trials)):
            tasks.append((K, trial, s, cfg))
    return [row for rows in pmap(_fig3_trial, tasks, workers) for row in rows]


# ---------------------------------------------------------------------------
# robustness to flipped labels


FIG4_METHODS = ("genie-LR", "genie-RLR", "EM-LR", "EM-RLR")
FIG4_COLUMNS = ["gamma", "trial", "method", "test_error", "gamma_hat", "sigma2_hat", "converged"]


@dataclass(frozen=True)
class Fig4Config:
    N: int = 512
    M: int = 8192
    T: int = 1024
    gammas: Tuple[float, ...] = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3)
    trials: int = 10
    eps_bayes: float = 0.05
    methods: Tuple[str, ...] = FIG4_METHODS
    em_alpha: float = 100.0
    gamma0: float = 0.01
    em: EMConfig = EMConfig(em_iters=10, gamp=GampConfig(damping=0.5, max_iter=300))


def _fig4_fit(data, method, gamma, mu, cfg: Fig4Config):
    genie_alpha = 2.0 * cfg.M * mu
    unit = GaussianPrior(0.0, 1.0)
    if method == "genie-LR":
        return em_fit(data, LogisticChannel(genie_alpha), unit, (), cfg.em)
    if method == "genie-RLR":
        return em_fit(data, RobustChannel(LogisticChannel(genie_alpha), gamma), unit, (), cfg.em)
    if method == "EM-LR":
        return em_fit(data, LogisticChannel(cfg.em_alpha), unit, {"sigma2"}, cfg.em)
    if method == "EM-RLR":
        out = RobustChannel(LogisticChannel(cfg.em_alpha), cfg.gamma0)
        return em_fit(data, out, unit, {"sigma2", "gamma"}, cfg.em)
    raise ValueError(f"unknown method {method!r}")


def _fig4_trial(args):
    gamma, trial, seed, cfg = args
    rng = np.random.default_rng(seed)
    data, truth = gen_class_conditional(cfg.N, cfg.M, cfg.eps_bayes, True, rng)
    y_noisy, _ = flip_labels(data.y, gamma, rng)
    train = Dataset(data.X, y_noisy)
    test = class_conditional_test(truth, cfg.T, rng)
    mu = truth.params["mu"]
    rows = []
    for method in cfg.methods:
        row = {"gamma": gamma, "trial": trial, "method": method}
        try:
            res = _fig4_fit(train, method, gamma, mu, cfg)
            pred = np.where(test.X @ res.result.w_hat >= 0, 1.0, -1.0)
            theta = res.theta.values
            row.update(test_error=error_rate(test.y, pred), gamma_hat=theta.get("gamma", ""),
                       sigma2_hat=theta.get("sigma2", ""), converged=int(res.result.converged))
        except (GampDivergence, FloatingPointError) as exc:
            row.update(test_error=float("nan"), gamma_hat="", sigma2_hat="",
                       converged=f"diverged: {exc}")
        rows.append(row)
    return rows


def fig4(cfg: Fig4Config = Fig4Config(), seed=0, workers=None) -> List[dict]:
    """Clean-test error of genie-aided and EM-tuned (robust) logistic classifiers."""
    tasks = []
    for gi, gamma in enumerate(cfg.gammas):
        if not 0.0 <= gamma < 0.5:
            raise ValueError(f"mislabeling probability {gamma} outside [0, 1/2)")
        for trial, s in enumerate(child_seeds([seed, gi], cfg.trials)):
            tasks.append((float(gamma), trial, s, cfg))
    return [row for rows in pmap(_fig4_trial, tasks, workers) for row in rows]


# ---------------------------------------------------------------------------
# summaries and output


def summarize(rows: Sequence[dict], keys: Sequence[str], values: Sequence[str]) -> List[dict]:
    """Mean of ``values`` grouped by ``keys`` (NaN rows are skipped)."""
    groups: Dict[tuple, List[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, grp in groups.items():
        row = dict(zip(keys, key))
        row["n"] = len(grp)
        for v in values:
            vals = [float(r[v]) for r in grp if r[v] != "" and np.isfinite(float(r[v]))]
            row[f"mean_{v}"] = float(np.mean(vals)) if vals else float("nan")
        out.append(row)
    return out


def _cell(x):
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return x


def write_rows(path_or_file, rows: Sequence[dict], columns: Sequence[str] = None):
    """CSV with a fixed column order and exact float formatting."""
    rows = list(rows)
    columns = list(columns or (rows[0].keys() if rows else []))
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k, "")) for k in columns})
    finally:
        if own:
            fh.close()
