"""Large-system performance prediction for GAMP classifiers.

The test score pair (Z, Z_hat) = (x'w, x'w_hat) of a fresh example with
i.i.d. N(0, 1/M) features is asymptotically bivariate normal with covariance
built from the per-coordinate joint moments of (W, W_hat).  Those moments
come either from a Monte-Carlo scalar recursion (:func:`se_recursion`) or
from finite-size GAMP ensembles (:func:`empirical_ensemble`).
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .channels.output import OutputChannel, ProbitChannel
from .channels.prior import InputChannel, SpikeSlabPrior
from .engine import GampConfig, GampSolver
from .parallel import child_seeds, pmap

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SEMoments:
    e_w: float
    var_w: float
    e_what: float
    var_what: float
    cov_w_what: float
    delta: float
    k: int = 0
    #: effective scalar-channel quantities (recursion only)
    tau_r: float = float("nan")
    alpha_r: float = float("nan")
    xi_r: float = float("nan")
    mean_tau_w: float = float("nan")

    def __post_init__(self):
        if self.var_w < 0 or self.var_what < 0:
            raise ValueError("variances must be non-negative")
        if abs(self.cov_w_what) > math.sqrt(self.var_w * self.var_what) + 1e-12:
            raise ValueError("covariance exceeds the Cauchy-Schwarz bound")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @classmethod
    def from_samples(cls, w, w_hat, delta, k=0, **extra):
        w = np.asarray(w, dtype=float).ravel()
        wh = np.asarray(w_hat, dtype=float).ravel()
        vw = float(np.var(w))
        vh = float(np.var(wh))
        cov = float(np.mean((w - w.mean()) * (wh - wh.mean())))
        # clip round-off so the Cauchy-Schwarz check holds exactly
        lim = math.sqrt(vw * vh)
        cov = max(-lim, min(lim, cov))
        return cls(float(w.mean()), vw, float(wh.mean()), vh, cov, delta, k, **extra)


@dataclass(frozen=True)
class SigmaZ:
    s11: float
    s12: float
    s22: float

    def __post_init__(self):
        tol = 1e-12 * max(1.0, abs(self.s11), abs(self.s22))
        if self.s11 < -tol or self.s22 < -tol or self.s12**2 > self.s11 * self.s22 + tol:
            raise FloatingPointError(f"score covariance is not positive semidefinite: {self}")

    def matrix(self):
        return np.array([[self.s11, self.s12], [self.s12, self.s22]])


def sigma_from_moments(m: SEMoments) -> SigmaZ:
    """Covariance of (Z, Z_hat) from the (W, W_hat) moments."""
    if m.e_w != 0.0:
        logger.debug("nonzero weight mean: folding means into second moments")
    d = 1.0 / m.delta
    return SigmaZ(d * (m.var_w + m.e_w**2),
                  d * (m.cov_w_what + m.e_w * m.e_what),
                  d * (m.var_what + m.e_what**2))


def probit_error_rate(sigma: SigmaZ, v: float) -> float:
    """Closed form 1/2 - arcsin(rho)/pi for labels sgn(Z - E), E ~ N(0, v)."""
    if not sigma.s22 > 0:
        raise ValueError("Sigma_22 must be positive")
    den = math.sqrt((sigma.s11 + v) * sigma.s22)
    rho = 0.0 if den == 0 else max(-1.0, min(1.0, sigma.s12 / den))
    return 0.5 - math.asin(rho) / math.pi


def quadrature_error_rate(sigma: SigmaZ, channel: OutputChannel) -> float:
    """Adaptive quadrature of Pr{Y != sgn(Z_hat)} for any output channel.

    The inner Gaussian integral over Z_hat given Z is done analytically, so
    only the outer integral over Z is numerical.
    """
    if not sigma.s22 > 0:
        raise ValueError("Sigma_22 must be positive")
    s11 = sigma.s11
    if s11 <= 0:
        return 0.5  # Z_hat is symmetric and independent of the label
    a = sigma.s12 / s11
    cvar = max(sigma.s22 - sigma.s12**2 / s11, 0.0)
    sd = math.sqrt(s11)

    def integrand(u):
        z = sd * u
        pz = float(channel.prob_positive(np.array(z)))
        m = a * z
        if cvar > 0:
            pos = float(ndtr(m / math.sqrt(cvar)))
        else:
            pos = 1.0 if m >= 0 else 0.0
        return math.exp(-0.5 * u * u) / math.sqrt(2 * math.pi) * (pos * (1 - pz) + (1 - pos) * pz)

    val = sum(integrate.quad(integrand, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=400)[0]
              for lo, hi in ((-40.0, 0.0), (0.0, 40.0)))
    return float(val)


def se_error_rate(sigma: SigmaZ, channel: OutputChannel) -> float:
    """Predicted test error for the decision rule sgn(Z_hat)."""
    if isinstance(channel, ProbitChannel):
        return probit_error_rate(sigma, channel.v)
    return quadrature_error_rate(sigma, channel)


def se_mse(m: SEMoments) -> float:
    """E[(W - W_hat)^2] from the joint moments."""
    val = (m.var_w + m.e_w**2 + m.var_what + m.e_what**2
           - 2.0 * (m.cov_w_what + m.e_w * m.e_what))
    return max(val, 0.0)


# ---------------------------------------------------------------------------
# scalar recursion


def _initial_tau_w(prior: InputChannel, literal_init: bool):
    if not literal_init and isinstance(prior, SpikeSlabPrior):
        return prior.variance()
    return 1.0


def se_recursion(prior: InputChannel, output_channel: OutputChannel, delta: float,
                 mc_samples: int = 100_000, iters: int = 50, rng=None,
                 true_prior: Optional[InputChannel] = None,
                 true_channel: Optional[OutputChannel] = None,
                 tol: float = 1e-4, eps_var: float = 1e-11,
                 literal_init: bool = False) -> List[SEMoments]:
    """Monte-Carlo scalar state evolution of undamped sum-product GAMP.

    Each step samples (Z, P_hat) from their joint Gaussian law, draws labels
    from the true channel and pushes them through the estimator's output
    map.  The resulting input-side scalar channel is R = alpha_r W + N(0, xi_r)
    where alpha_r = tau_r E[ds/dz] (Stein regression) and
    xi_r = tau_r^2 E[s^2]; in the matched case alpha_r = 1 and xi_r = tau_r.
    The recursion stops early once the moments change by less than ``tol``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if mc_samples < 10_000:
        raise ValueError("mc_samples must be at least 1e4")
    rng = np.random.default_rng(rng)
    true_prior = prior if true_prior is None else true_prior
    true_channel = output_channel if true_channel is None else true_channel
    n = int(mc_samples)
    w = true_prior.sample(n, rng)
    e_w2 = float(np.mean(w * w))
    w_hat = np.zeros(n)
    mean_tau_w = _initial_tau_w(prior, literal_init)
    out: List[SEMoments] = []
    prev = None
    for k in range(1, iters + 1):
        tau_p = max(mean_tau_w / delta, eps_var)
        k11 = e_w2 / delta
        k12 = float(np.mean(w * w_hat)) / delta
        k22 = float(np.mean(w_hat * w_hat)) / delta
        z = math.sqrt(k11) * rng.standard_normal(n)
        a = k12 / k11 if k11 > 0 else 0.0
        resid = max(k22 - a * k12, 0.0)
        p_hat = a * z + math.sqrt(resid) * rng.standard_normal(n)
        y = true_channel.sample(z, rng)
        mom = output_channel.spg(y, p_hat, np.full(n, tau_p))
        s = (mom.z_hat - p_hat) / tau_p
        tau_s = np.maximum(1.0 / tau_p - mom.tau_z / tau_p**2, eps_var)
        tau_r = 1.0 / float(np.mean(tau_s))
        # Stein: E[s (Z, P)] = K E[grad s]
        kmat = np.array([[k11, k12], [k12, k22]])
        rhs = np.array([np.mean(s * z), np.mean(s * p_hat)])
        if k22 > 1e-12 * k11 and np.linalg.cond(kmat) < 1e12:
            ds_dz = float(np.linalg.solve(kmat, rhs)[0])
        else:
            ds_dz = float(rhs[0] / k11)
        alpha_r = tau_r * ds_dz
        xi_r = tau_r**2 * float(np.mean(s * s))
        if xi_r < 0 or tau_r < 0:
            raise FloatingPointError(f"negative effective variance at iteration {k}")
        r = alpha_r * w + math.sqrt(xi_r) * rng.standard_normal(n)
        pm = prior.spg(r, np.full(n, tau_r))
        w_hat = pm.w_hat
        mean_tau_w = float(np.mean(pm.tau_w))
        m = SEMoments.from_samples(w, w_hat, delta, k, tau_r=tau_r, alpha_r=alpha_r,
                                   xi_r=xi_r, mean_tau_w=mean_tau_w)
        out.append(m)
        cur = np.array([m.cov_w_what + m.e_w * m.e_what, m.var_what + m.e_what**2])
        if prev is not None and np.max(np.abs(cur - prev)) <= tol * max(1.0, np.max(np.abs(cur))):
            break
        prev = cur
    return out


# ---------------------------------------------------------------------------
# finite-size ensembles


@dataclass
class EnsembleResult:
    moments: List[SEMoments]
    errors: np.ndarray
    mses: np.ndarray
    iterations: np.ndarray

    @property
    def mean_error(self):
        return float(np.mean(self.errors))

    @property
    def mean_mse(self):
        return float(np.mean(self.mses))


def realization_error(w, w_hat, v, M):
    """Exact test error of sgn(x'w_hat) for one realization (x ~ N(0, I/M))."""
    sig = SigmaZ(float(w @ w) / M, float(w @ w_hat) / M, float(w_hat @ w_hat) / M)
    if sig.s22 <= 0:
        return 0.5
    return probit_error_rate(sig, v)


def _ensemble_trial(args):
    seed, N, M, prior, channel, config = args
    rng = np.random.default_rng(seed)
    w = prior.sample(N, rng)
    X = rng.standard_normal((M, N)) / math.sqrt(M)
    y = channel.sample(X @ w, rng)
    cfg = GampConfig(**{**asdict(config), "keep_history": True})
    res = GampSolver(X, y, channel, prior, cfg).run()
    return w, res.history, res.w_hat, res.n_iter


def empirical_ensemble(prior: InputChannel, channel: ProbitChannel, N: int, M: int,
                       trials: int, config: GampConfig = GampConfig(damping=1.0, tol=1e-6),
                       seed=0, workers=None) -> EnsembleResult:
    """Run GAMP on ``trials`` synthetic instances and pool per-iteration moments.

    ``moments[k-1]`` pools (W, W_hat^k) over trials that reached iteration k
    (finished runs are held at their final iterate).  ``errors`` and ``mses``
    are per-trial values at convergence.
    """
    seeds = child_seeds(seed, trials)
    runs = pmap(_ensemble_trial, [(s, N, M, prior, channel, config) for s in seeds], workers)
    kmax = max(len(h) for _, h, _, _ in runs)
    delta = M / N
    ws = np.concatenate([w for w, _, _, _ in runs])
    moments = []
    for k in range(kmax):
        wh = np.concatenate([h[min(k, len(h) - 1)] for _, h, _, _ in runs])
        moments.append(SEMoments.from_samples(ws, wh, delta, k + 1))
    errors = np.array([realization_error(w, wf, channel.v, M) for w, _, wf, _ in runs])
    mses = np.array([float(np.mean((w - wf) ** 2)) for w, _, wf, _ in runs])
    iters = np.array([n for _, _, _, n in runs])
    return EnsembleResult(moments, errors, mses, iters)


# ---------------------------------------------------------------------------
# phase-plane sweep


@dataclass(frozen=True)
class SweepConfig:
    N: int = 1024
    v: float = 0.01
    mc_samples: int = 100_000
    se_iters: int = 50
    trials: int = 0
    seed: int = 0
    gamp: GampConfig = GampConfig(damping=1.0, tol=1e-6, max_iter=200)


SWEEP_COLUMNS = ["M_over_N", "K_over_N", "k", "epsilon_pred", "epsilon_emp",
                 "mse_pred", "mse_emp", "ill_posed"]


def bernoulli_gaussian(rho: float) -> SpikeSlabPrior:
    from .channels.prior import GaussianPrior
    return SpikeSlabPrior(rho, GaussianPrior(0.0, 1.0))


def _sweep_point(args):
    delta, rho, cfg, seed = args
    row = {"M_over_N": delta, "K_over_N": rho, "k": "", "epsilon_pred": "", "epsilon_emp": "",
           "mse_pred": "", "mse_emp": "", "ill_posed": int(rho > delta)}
    if rho > delta:
        return row
    prior = bernoulli_gaussian(rho)
    channel = ProbitChannel(cfg.v)
    s1, s2 = child_seeds(seed, 2)
    try:
        ms = se_recursion(prior, channel, delta, cfg.mc_samples, cfg.se_iters, rng=s1)
        last = ms[-1]
        row.update(k=last.k, epsilon_pred=se_error_rate(sigma_from_moments(last), channel),
                   mse_pred=se_mse(last))
        if cfg.trials > 0:
            M = max(1, int(round(delta * cfg.N)))
            ens = empirical_ensemble(prior, channel, cfg.N, M, cfg.trials, cfg.gamp, s2, workers=1)
            row.update(epsilon_emp=ens.mean_error, mse_emp=ens.mean_mse)
    except (FloatingPointError, ValueError) as exc:
        logger.warning("sweep point (%g, %g) failed: %s", delta, rho, exc)
        row["k"] = f"failed: {exc}"
    return row


def se_phase_sweep(grid: Sequence[tuple], config: SweepConfig = SweepConfig(), workers=None):
    """One row per (M/N, K/N) grid point; K > M points are flagged and skipped."""
    grid = list(grid)
    if not grid:
        raise ValueError("grid must be nonempty")
    seeds = child_seeds(config.seed, len(grid))
    return pmap(_sweep_point, [(float(d), float(r), config, s) for (d, r), s in zip(grid, seeds)],
                workers)


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
