"""EM learning of channel hyperparameters around GAMP.

The E-step uses the GAMP marginal approximations: the score posterior
q(z_m) proportional to p(y_m | z_m) N(z_m; p_hat_m, tau_p_m) and the weight posterior
q(w_n) proportional to p(w_n) N(w_n; r_hat_n, tau_r_n).  Each M-step maximizes the
expected complete log-likelihood of one parameter block with those
marginals frozen.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

import numpy as np
from scipy import optimize

from ._numerics import hermite_nodes, log_norm_cdf, mills
from .channels.output import (
    LogisticChannel,
    OutputChannel,
    ProbitChannel,
    RobustChannel,
    ScalarMoments,
)
from .channels.prior import (
    ConfigurationError,
    ElasticNetPrior,
    GaussianMixturePrior,
    GaussianPrior,
    InputChannel,
    PriorMoments,
    SpikeSlabPrior,
)
from .data import Dataset
from .engine import GampConfig, GampDivergence, GampResult, GampSolver, GampState

logger = logging.getLogger(__name__)

ALPHA_BRACKET = (1e-6, 1e6)
V_BRACKET = (1e-8, 1e8)
GAMMA_MAX = 0.5 - 1e-6


@dataclass(frozen=True)
class ThetaParams:
    """Hyperparameter snapshot of an (output, input) channel pair.

    ``values`` merges both channels' parameters (their names do not
    collide); ``tuned`` lists the ones EM is allowed to move.
    """

    values: Dict[str, object]
    tuned: FrozenSet[str] = frozenset()

    @classmethod
    def from_channels(cls, output_channel, input_channel, tuned: Iterable[str] = ()):
        return cls({**output_channel.params(), **input_channel.params()}, frozenset(tuned))

    def apply(self, output_channel, input_channel):
        out_keys = output_channel.params().keys()
        out_kw = {k: v for k, v in self.values.items() if k in out_keys}
        in_kw = {k: v for k, v in self.values.items() if k not in out_keys}
        return output_channel.with_params(**out_kw), input_channel.with_params(**in_kw)

    def __getitem__(self, key):
        return self.values[key]


@dataclass(frozen=True)
class EMConfig:
    em_iters: int = 5
    gamp: GampConfig = GampConfig()
    #: "per_iteration" (one M-step per GAMP iteration), "per_run" (GAMP to
    #: convergence between M-steps) or "auto": per_iteration for sum-product
    #: and per_run for max-sum
    cadence: str = "auto"
    alpha_tol: float = 1e-12
    v_tol: float = 1e-12
    quad_order: int = 63

    def __post_init__(self):
        if self.em_iters < 1:
            raise ValueError("em_iters must be at least 1")
        if self.cadence not in ("auto", "per_iteration", "per_run"):
            raise ValueError(f"unknown cadence {self.cadence!r}")

    @property
    def resolved_cadence(self):
        if self.cadence != "auto":
            return self.cadence
        return "per_iteration" if self.gamp.mode == "sum_product" else "per_run"


@dataclass
class EMResult:
    theta: ThetaParams
    result: GampResult
    output_channel: OutputChannel
    input_channel: InputChannel
    trace: List[Tuple[int, str, object]] = field(default_factory=list)
    flags: List[Tuple[int, str, str]] = field(default_factory=list)


class EMDivergence(GampDivergence):
    """Inner GAMP diverged; ``theta_trace`` holds the parameter history."""

    def __init__(self, msg, trace=None, theta_trace=None):
        super().__init__(msg, trace)
        self.theta_trace = theta_trace or []


# ---------------------------------------------------------------------------
# individual M-steps.  Each returns (value, flagged).


def _safeguarded_newton(fun, dfun, lo, hi, x0, xtol=1e-12, max_iter=200):
    """Root of a decreasing function on [lo, hi] with f(lo) > 0 > f(hi)."""
    x = min(max(x0, lo), hi)
    for _ in range(max_iter):
        fx = fun(x)
        if fx == 0.0:
            return x
        if fx > 0:
            lo = x
        else:
            hi = x
        d = dfun(x)
        x_new = x - fx / d if d < 0 else 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= xtol * max(1.0, abs(x)):
            return x_new
        x = x_new
    return x


def alpha_residual(alpha, z_hats, xis, ys):
    """Derivative in alpha of the variational logistic bound (decreasing in alpha)."""
    z_hats, xis, ys = (np.asarray(a, dtype=float) for a in (z_hats, xis, ys))
    ax = np.clip(alpha * xis, -700, 700)
    return float(np.sum(0.5 * (z_hats * ys - xis) + xis / (1.0 + np.exp(ax))))


def update_alpha(z_hats, xis, ys, alpha_old=1.0, tol=1e-12, bracket=ALPHA_BRACKET):
    """Logistic scale maximizing the variational bound with xi frozen.

    Returns ``(alpha, flagged)``; ``flagged`` means the root is outside the
    bracket and the nearer end is returned.
    """
    z_hats, xis, ys = (np.asarray(a, dtype=float) for a in (z_hats, xis, ys))
    lo, hi = bracket
    f = lambda a: alpha_residual(a, z_hats, xis, ys)

    def df(a):
        ax = np.clip(a * xis, -700, 700)
        e = np.exp(-np.abs(ax))
        return float(-np.sum(xis**2 * e / (1.0 + e) ** 2))

    f_lo, f_hi = f(lo), f(hi)
    if f_lo <= 0:
        return lo, True
    if f_hi >= 0:
        return hi, True
    return _safeguarded_newton(f, df, lo, hi, alpha_old, tol), False


def _tilted_nodes(y, p_hat, tau_p, v_old, order):
    """Gauss-Hermite nodes/weights for q(z) proportional to Phi(y z/sqrt(v_old)) N(z; p_hat, tau_p).

    Nodes sit on the Gaussian matched to q; the remaining ratio enters as
    self-normalized importance weights.
    """
    m = ProbitChannel(v_old).spg(y, p_hat, tau_p)
    x, w = hermite_nodes(order)
    mu = m.z_hat[:, None]
    sd = np.sqrt(np.maximum(m.tau_z, 1e-300))[:, None]
    z = mu + sd * x
    logq = log_norm_cdf(y[:, None] * z / math.sqrt(v_old)) \
        - 0.5 * (z - p_hat[:, None]) ** 2 / tau_p[:, None]
    logg = -0.5 * x**2 - np.log(sd)
    lw = np.log(w) + logq - logg
    lw -= lw.max(axis=1, keepdims=True)
    wt = np.exp(lw)
    wt /= wt.sum(axis=1, keepdims=True)
    return y[:, None] * z, wt


def probit_v_residual(v, t, wt):
    """sum_m E_q[c mills(c)] with c = y z / sqrt(v); zero at the M-step optimum."""
    c = t / math.sqrt(v)
    return float(np.sum(wt * c * mills(c)))


def probit_v_objective(v, t, wt):
    return float(np.sum(wt * log_norm_cdf(t / math.sqrt(v))))


def update_probit_v(p_hats, tau_ps, ys, v_old=1.0, order=63, tol=1e-12, bracket=V_BRACKET):
    """Probit noise variance maximizing E_q[sum_m log Phi(y_m z_m / sqrt(v))].

    Expectations use 63-node Gauss-Hermite under the posterior computed with
    ``v_old``; the root is bracketed in log v.  Returns ``(v, flagged)``.
    """
    ys, p_hats, tau_ps = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (ys, p_hats, tau_ps))
    t, wt = _tilted_nodes(ys, p_hats, tau_ps, v_old, order)
    g = lambda lv: probit_v_residual(math.exp(lv), t, wt)
    llo, lhi = math.log(bracket[0]), math.log(bracket[1])
    g_lo, g_hi = g(llo), g(lhi)
    if g_lo >= 0:
        return bracket[0], True
    if g_hi <= 0:
        return bracket[1], True
    lv = optimize.brentq(g, llo, lhi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)
    return math.exp(lv), False


def update_gamma(corruption_responsibilities):
    """Mean corruption responsibility, clamped below 1/2."""
    rho = np.asarray(corruption_responsibilities, dtype=float)
    if np.any((rho < 0) | (rho > 1)):
        raise ValueError("responsibilities must lie in [0, 1]")
    g = float(np.mean(rho))
    return min(max(g, 0.0), GAMMA_MAX)


def update_spike_slab(prior_moments: PriorMoments, mu_old=0.0, sigma2_old=1.0,
                      tune_mu=True, tune_sigma2=True):
    """(pi, slab mean, slab variance) from responsibility-weighted moments."""
    pp = np.asarray(prior_moments.nonzero_prob, dtype=float)
    pi = float(np.mean(pp))
    mass = pp.sum()
    if mass <= 0 or prior_moments.slab_mean is None:
        return pi, mu_old, sigma2_old
    m = np.asarray(prior_moments.slab_mean)
    v = np.asarray(prior_moments.slab_var)
    mu = float(np.sum(pp * m) / mass) if tune_mu else mu_old
    sigma2 = float(np.sum(pp * ((m - mu) ** 2 + v)) / mass) if tune_sigma2 else sigma2_old
    return pi, mu, max(sigma2, 1e-12)


def update_lambda1(abs_means, lambda_old=None):
    """Laplacian rate N / sum_n E|W_n|; returns ``(lambda1, flagged)``."""
    a = np.asarray(abs_means, dtype=float)
    total = float(a.sum())
    if not total > 0:
        return lambda_old, True
    return a.size / total, False


def update_gaussian_sigma2(prior_moments: PriorMoments, mu=0.0):
    """Prior variance mean((w_hat - mu)^2 + tau_w)."""
    w = np.asarray(prior_moments.w_hat)
    return max(float(np.mean((w - mu) ** 2 + prior_moments.tau_w)), 1e-12)


def update_gaussian_mixture(r_hat, tau_r, omega, mu, sigma2):
    """One EM sweep over mixture weights, means and variances."""
    r = np.asarray(r_hat, dtype=float)[:, None]
    t = np.asarray(tau_r, dtype=float)[:, None]
    om = np.asarray(omega, dtype=float)[None, :]
    mu_ = np.asarray(mu, dtype=float)[None, :]
    s2 = np.asarray(sigma2, dtype=float)[None, :]
    tot = s2 + t
    lw = np.log(om) - 0.5 * np.log(tot) - 0.5 * (r - mu_) ** 2 / tot
    lw -= lw.max(axis=1, keepdims=True)
    beta = np.exp(lw)
    beta /= beta.sum(axis=1, keepdims=True)
    m = (r * s2 + mu_ * t) / tot
    v = s2 * t / tot
    mass = np.maximum(beta.sum(axis=0), 1e-300)
    omega_new = mass / beta.shape[0]
    mu_new = (beta * m).sum(axis=0) / mass
    s2_new = np.maximum((beta * ((m - mu_new) ** 2 + v)).sum(axis=0) / mass, 1e-12)
    return tuple(omega_new), tuple(mu_new), tuple(s2_new)


# ---------------------------------------------------------------------------
# driver

_OUTPUT_RULES = {"alpha": LogisticChannel, "v": ProbitChannel, "gamma": RobustChannel}


def validate_mask(tuned, output_channel, input_channel):
    """Every tuned name needs an M-step for the given channel pair."""
    for name in tuned:
        if name in _OUTPUT_RULES:
            if type(output_channel) is not _OUTPUT_RULES[name]:
                raise ConfigurationError(
                    f"{name!r} can only be tuned with {_OUTPUT_RULES[name].__name__}, "
                    f"not {type(output_channel).__name__}")
            continue
        if isinstance(input_channel, SpikeSlabPrior):
            ok = name == "pi" or (name in ("slab_mu", "slab_sigma2")
                                  and isinstance(input_channel.slab, GaussianPrior))
        elif isinstance(input_channel, ElasticNetPrior):
            ok = name == "lambda1" and input_channel.lambda2 == 0.0
        elif isinstance(input_channel, GaussianPrior):
            ok = name == "sigma2"
        elif isinstance(input_channel, GaussianMixturePrior):
            ok = name in ("omega", "mu", "sigma2")
        else:
            ok = False
        if not ok:
            raise ConfigurationError(f"no EM rule for {name!r} with {type(input_channel).__name__}")


def m_step(tuned, y, output_channel, input_channel, out: ScalarMoments, pm: PriorMoments,
           state: GampState, config: EMConfig):
    """Apply every tuned update once; returns (new values, flagged names)."""
    new = {}
    flags = []
    if "alpha" in tuned:
        a, flag = update_alpha(out.z_hat, out.xi, y, output_channel.alpha, config.alpha_tol)
        new["alpha"] = a
        if flag:
            flags.append("alpha")
    if "v" in tuned:
        v, flag = update_probit_v(state.p_hat, state.tau_p, y, output_channel.v,
                                  config.quad_order, config.v_tol)
        new["v"] = v
        if flag:
            flags.append("v")
    if "gamma" in tuned:
        new["gamma"] = update_gamma(out.corrupt_prob)
    if isinstance(input_channel, SpikeSlabPrior):
        if tuned & {"pi", "slab_mu", "slab_sigma2"}:
            pi, mu, s2 = update_spike_slab(pm, input_channel.slab.mu, input_channel.slab.sigma2,
                                           "slab_mu" in tuned, "slab_sigma2" in tuned)
            if "pi" in tuned:
                new["pi"] = min(max(pi, 1e-12), 1.0)
            if "slab_mu" in tuned:
                new["slab_mu"] = mu
            if "slab_sigma2" in tuned:
                new["slab_sigma2"] = s2
    elif isinstance(input_channel, ElasticNetPrior):
        if "lambda1" in tuned:
            lam, flag = update_lambda1(pm.abs_mean, input_channel.lambda1)
            new["lambda1"] = lam
            if flag:
                flags.append("lambda1")
    elif isinstance(input_channel, GaussianPrior):
        if "sigma2" in tuned:
            new["sigma2"] = update_gaussian_sigma2(pm, input_channel.mu)
    elif isinstance(input_channel, GaussianMixturePrior):
        if tuned & {"omega", "mu", "sigma2"}:
            om, mu, s2 = update_gaussian_mixture(state.r_hat, state.tau_r, input_channel.omega,
                                                 input_channel.mu, input_channel.sigma2)
            if "omega" in tuned:
                new["omega"] = om
            if "mu" in tuned:
                new["mu"] = mu
            if "sigma2" in tuned:
                new["sigma2"] = s2
    return new, flags


def _rel_change(old: dict, new: dict):
    worst = 0.0
    for k, v in new.items():
        a = np.asarray(old[k], dtype=float)
        b = np.asarray(v, dtype=float)
        worst = max(worst, float(np.max(np.abs(b - a) / np.maximum(np.abs(a), 1e-12))))
    return worst


def em_fit(dataset: Dataset, output_channel: OutputChannel, input_channel: InputChannel,
           tuned: Iterable[str] = (), config: EMConfig = EMConfig(),
           init_state: Optional[GampState] = None) -> EMResult:
    """Alternate GAMP with M-steps for the parameters named in ``tuned``.

    With an empty ``tuned`` this is a single GAMP run.  In the per-iteration
    cadence every GAMP iteration is followed by one M-step and the run stops
    when both the weights and the parameters have settled (or at
    ``gamp.max_iter``); in the per-run cadence ``em_iters`` warm-started
    GAMP runs alternate with M-steps.
    """
    tuned = frozenset(tuned)
    validate_mask(tuned, output_channel, input_channel)
    theta = ThetaParams.from_channels(output_channel, input_channel, tuned)
    trace = [(0, k, theta.values[k]) for k in sorted(tuned)]
    flags: List[Tuple[int, str, str]] = []
    gcfg = config.gamp
    solver = GampSolver(dataset.X, dataset.y, output_channel, input_channel, gcfg, init_state)
    y = solver.y

    if not tuned:
        result = solver.run()
        return EMResult(theta, result, output_channel, input_channel, trace, flags)

    def do_m_step(it):
        nonlocal theta
        st = solver.state
        if gcfg.mode == "sum_product":
            out, pm = solver.out_moments, solver.prior_moments
        else:
            out = solver.output_channel.spg(y, st.p_hat, st.tau_p)
            pm = solver.input_channel.spg(st.r_hat, st.tau_r)
        new, flg = m_step(tuned, y, solver.output_channel, solver.input_channel, out, pm, st, config)
        change = _rel_change(theta.values, new)
        theta = ThetaParams({**theta.values, **new}, tuned)
        solver.output_channel, solver.input_channel = theta.apply(solver.output_channel,
                                                                  solver.input_channel)
        for k in sorted(new):
            trace.append((it, k, new[k]))
        for k in flg:
            flags.append((it, k, "boundary"))
            logger.warning("EM update of %s hit its bracket boundary at iteration %d", k, it)
        return change

    try:
        if config.resolved_cadence == "per_iteration":
            records = []
            converged = False
            for it in range(1, gcfg.max_iter + 1):
                rel = solver.step()
                records.append({"k": solver.state.k, "rel_change": rel})
                change = do_m_step(it)
                if rel < gcfg.tol and change < gcfg.tol:
                    converged = True
                    break
            result = solver.result(converged, records)
        else:
            for it in range(1, config.em_iters + 1):
                result = solver.run()
                do_m_step(it)
            # final E-step under the last parameters
            result = solver.run()
    except GampDivergence as exc:
        raise EMDivergence(str(exc), exc.trace, trace) from exc
    return EMResult(theta, result, solver.output_channel, solver.input_channel, trace, flags)


def write_theta_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["em_iter", "parameter", "value"])
        for it, name, value in trace:
            w.writerow([it, name, repr(value)])
