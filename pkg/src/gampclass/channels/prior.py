"""Weight-prior (input) channels.

Sum-product evaluation returns the moments of ``p(w) N(w; r_hat, tau_r)``
normalized; max-sum evaluation returns the proximal pair of
``f(w) = -log p(w)``.  All normalizers are kept in the log domain.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .._numerics import (
    gauss_logpdf,
    log_norm_cdf,
    truncnorm_lower_moments,
    truncnorm_upper_moments,
)


class ConfigurationError(ValueError):
    """Raised for channel/mode combinations that have no defined update."""


@dataclass
class PriorMoments:
    """Per-coordinate posterior summary produced by an input channel.

    ``slab_mean``/``slab_var`` are the moments conditional on W != 0 (only set
    by the spike-and-slab prior) and ``abs_mean`` is E|W| (set by the
    elastic-net family, consumed by the lambda1 M-step).
    """

    w_hat: np.ndarray
    tau_w: np.ndarray
    nonzero_prob: np.ndarray
    log_scale: Optional[np.ndarray] = None
    slab_mean: Optional[np.ndarray] = None
    slab_var: Optional[np.ndarray] = None
    abs_mean: Optional[np.ndarray] = None


def _arrays(r_hat, tau_r):
    return np.broadcast_arrays(np.asarray(r_hat, dtype=float), np.asarray(tau_r, dtype=float))


def gaussian_spg(r_hat, tau_r, mu=0.0, sigma2=1.0):
    """Conjugate Gaussian product posterior."""
    r_hat, tau_r = _arrays(r_hat, tau_r)
    tau_w = 1.0 / (1.0 / sigma2 + 1.0 / tau_r)
    w_hat = tau_w * (mu / sigma2 + r_hat / tau_r)
    log_c = gauss_logpdf(r_hat, mu, sigma2 + tau_r)
    return PriorMoments(w_hat, tau_w, np.ones_like(w_hat), log_c,
                        abs_mean=None)


def _elastic_net_log_norm(lambda1, lambda2):
    """log of the integral of exp(-lambda1|w| - lambda2 w^2) over the real line."""
    if lambda2 == 0.0:
        return np.log(2.0 / lambda1)
    if lambda1 == 0.0:
        return 0.5 * np.log(np.pi / lambda2)
    return (np.log(2.0) + 0.5 * np.log(np.pi / lambda2) + lambda1**2 / (4.0 * lambda2)
            + log_norm_cdf(-lambda1 / np.sqrt(2.0 * lambda2)))


def elastic_net_spg(r_hat, tau_r, lambda1, lambda2=0.0):
    """Posterior moments under the prior proportional to exp(-lambda1|w| - lambda2 w^2).

    ``lambda1 == 0`` is the Gaussian prior with variance 1/(2 lambda2) and is
    dispatched to :func:`gaussian_spg`.
    """
    r_hat, tau_r = _arrays(r_hat, tau_r)
    if lambda1 == 0.0:
        if lambda2 == 0.0:
            raise ValueError("elastic-net prior needs lambda1 > 0 or lambda2 > 0")
        out = gaussian_spg(r_hat, tau_r, 0.0, 1.0 / (2.0 * lambda2))
        out.abs_mean = None
        return out
    k = 2.0 * lambda2 * tau_r + 1.0
    sigma = np.sqrt(tau_r / k)
    r_dd = r_hat / (sigma * k)
    r_lo = r_dd + lambda1 * sigma
    r_hi = r_dd - lambda1 * sigma
    log_lo = 0.5 * (r_lo**2 - r_dd**2) + log_norm_cdf(-r_lo)
    log_hi = 0.5 * (r_hi**2 - r_dd**2) + log_norm_cdf(r_hi)
    log_sum = np.logaddexp(log_lo, log_hi)
    w_lo = np.exp(log_lo - log_sum)
    w_hi = np.exp(log_hi - log_sum)
    mu_lo, v_lo = truncnorm_upper_moments(sigma * r_lo, sigma, -r_lo)
    mu_hi, v_hi = truncnorm_lower_moments(sigma * r_hi, sigma, -r_hi)
    w_hat = w_lo * mu_lo + w_hi * mu_hi
    second = w_lo * (v_lo + mu_lo**2) + w_hi * (v_hi + mu_hi**2)
    tau_w = np.maximum(second - w_hat**2, 0.0)
    log_gauss = -0.5 * np.log(k) - lambda2 * r_hat**2 / k
    log_c = log_gauss + log_sum - _elastic_net_log_norm(lambda1, lambda2)
    abs_mean = -w_lo * mu_lo + w_hi * mu_hi
    return PriorMoments(w_hat, tau_w, np.ones_like(w_hat), log_c, abs_mean=abs_mean)


def elastic_net_msg(r_hat, tau_r, lambda1, lambda2=0.0):
    """Prox of lambda1|w| + lambda2 w^2: scaled soft threshold."""
    r_hat, tau_r = _arrays(r_hat, tau_r)
    k = 2.0 * lambda2 * tau_r + 1.0
    sigma2 = tau_r / k
    sr = r_hat / k  # sigma * r_ddot
    w_hat = np.sign(sr) * np.maximum(np.abs(sr) - lambda1 * sigma2, 0.0)
    tau_w = sigma2 * (w_hat != 0)
    return PriorMoments(w_hat, tau_w, (w_hat != 0).astype(float))


def gaussian_mixture_spg(r_hat, tau_r, omega, mu, sigma2):
    """Posterior moments under sum_l omega_l N(w; mu_l, sigma2_l)."""
    r_hat, tau_r = _arrays(r_hat, tau_r)
    omega = np.asarray(omega, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    r = r_hat[..., None]
    t = tau_r[..., None]
    with np.errstate(divide="ignore"):
        log_resp = np.log(omega) + gauss_logpdf(r, mu, sigma2 + t)
    log_c = np.logaddexp.reduce(log_resp, axis=-1)
    resp = np.exp(log_resp - log_c[..., None])
    var_l = 1.0 / (1.0 / sigma2 + 1.0 / t)
    mean_l = var_l * (mu / sigma2 + r / t)
    w_hat = np.sum(resp * mean_l, axis=-1)
    tau_w = np.maximum(np.sum(resp * (var_l + mean_l**2), axis=-1) - w_hat**2, 0.0)
    return PriorMoments(w_hat, tau_w, np.ones_like(w_hat), log_c)


def spike_slab_spg(r_hat, tau_r, pi, slab):
    """Bernoulli mixture of a point mass at zero and the ``slab`` channel."""
    r_hat, tau_r = _arrays(r_hat, tau_r)
    s = slab.spg(r_hat, tau_r)
    with np.errstate(divide="ignore"):
        log_on = np.log(pi) + s.log_scale
        log_off = np.log1p(-pi) + gauss_logpdf(0.0, r_hat, tau_r)
    log_c = np.logaddexp(log_on, log_off)
    pi_post = np.exp(log_on - log_c)
    w_hat = pi_post * s.w_hat
    tau_w = np.maximum(pi_post * (s.tau_w + s.w_hat**2) - w_hat**2, 0.0)
    abs_mean = None if s.abs_mean is None else pi_post * s.abs_mean
    return PriorMoments(w_hat, tau_w, pi_post, log_c, slab_mean=s.w_hat,
                        slab_var=s.tau_w, abs_mean=abs_mean)


# ---------------------------------------------------------------------------
# channel objects


class InputChannel:
    """Base class for separable weight priors."""

    supports_max_sum = True

    def spg(self, r_hat, tau_r) -> PriorMoments:
        raise NotImplementedError

    def msg(self, r_hat, tau_r) -> PriorMoments:
        raise ConfigurationError(f"{type(self).__name__} has no max-sum update")

    def penalty(self, w):
        """Regularizer f(w) = -log p(w) up to a constant (max-sum objective)."""
        raise ConfigurationError(f"{type(self).__name__} has no max-sum penalty")

    def mean(self) -> float:
        return 0.0

    def second_moment(self) -> float:
        raise NotImplementedError

    def variance(self) -> float:
        return self.second_moment() - self.mean() ** 2

    def sample(self, n, rng):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def with_params(self, **kw) -> "InputChannel":
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianPrior(InputChannel):
    mu: float = 0.0
    sigma2: float = 1.0

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"prior variance must be positive, got {self.sigma2}")

    def spg(self, r_hat, tau_r):
        return gaussian_spg(r_hat, tau_r, self.mu, self.sigma2)

    def msg(self, r_hat, tau_r):
        out = gaussian_spg(r_hat, tau_r, self.mu, self.sigma2)
        out.log_scale = None
        return out

    def penalty(self, w):
        return (np.asarray(w) - self.mu) ** 2 / (2.0 * self.sigma2)

    def mean(self):
        return self.mu

    def second_moment(self):
        return self.sigma2 + self.mu**2

    def sample(self, n, rng):
        return self.mu + np.sqrt(self.sigma2) * rng.standard_normal(n)

    def params(self):
        return {"mu": self.mu, "sigma2": self.sigma2}

    def with_params(self, mu=None, sigma2=None, **_):
        return GaussianPrior(self.mu if mu is None else mu,
                             self.sigma2 if sigma2 is None else sigma2)


@dataclass(frozen=True)
class ElasticNetPrior(InputChannel):
    """exp(-lambda1|w| - lambda2 w^2); lambda2 = 0 is the Laplacian prior."""

    lambda1: float = 1.0
    lambda2: float = 0.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("elastic-net weights must be non-negative")

    def spg(self, r_hat, tau_r):
        return elastic_net_spg(r_hat, tau_r, self.lambda1, self.lambda2)

    def msg(self, r_hat, tau_r):
        return elastic_net_msg(r_hat, tau_r, self.lambda1, self.lambda2)

    def penalty(self, w):
        w = np.asarray(w)
        return self.lambda1 * np.abs(w) + self.lambda2 * w * w

    def second_moment(self):
        if self.lambda2 == 0.0:
            return 2.0 / self.lambda1**2
        if self.lambda1 == 0.0:
            return 1.0 / (2.0 * self.lambda2)
        s = 1.0 / np.sqrt(2.0 * self.lambda2)
        m = -self.lambda1 / (2.0 * self.lambda2)
        tm, tv = truncnorm_lower_moments(m, s, -m / s)
        return float(tv + tm**2)

    def sample(self, n, rng):
        if self.lambda2 == 0.0:
            return rng.laplace(0.0, 1.0 / self.lambda1, n)
        # rejection from the Gaussian factor
        out = np.empty(0)
        s = 1.0 / np.sqrt(2.0 * self.lambda2)
        while out.size < n:
            cand = s * rng.standard_normal(2 * n)
            keep = rng.random(2 * n) < np.exp(-self.lambda1 * np.abs(cand))
            out = np.concatenate([out, cand[keep]])
        return out[:n]

    def params(self):
        return {"lambda1": self.lambda1, "lambda2": self.lambda2}

    def with_params(self, lambda1=None, lambda2=None, **_):
        return ElasticNetPrior(self.lambda1 if lambda1 is None else lambda1,
                               self.lambda2 if lambda2 is None else lambda2)


def laplacian_prior(lam=1.0):
    return ElasticNetPrior(lam, 0.0)


@dataclass(frozen=True)
class GaussianMixturePrior(InputChannel):
    omega: Sequence[float] = (1.0,)
    mu: Sequence[float] = (0.0,)
    sigma2: Sequence[float] = (1.0,)
    supports_max_sum = False

    def __post_init__(self):
        om = np.asarray(self.omega, dtype=float)
        if not (len(self.omega) == len(self.mu) == len(self.sigma2)):
            raise ValueError("mixture parameter lengths differ")
        if np.any(om < 0) or not np.isclose(om.sum(), 1.0):
            raise ValueError("mixture weights must be non-negative and sum to one")
        if np.any(np.asarray(self.sigma2, dtype=float) <= 0):
            raise ValueError("mixture variances must be positive")

    def spg(self, r_hat, tau_r):
        return gaussian_mixture_spg(r_hat, tau_r, self.omega, self.mu, self.sigma2)

    def mean(self):
        return float(np.dot(self.omega, self.mu))

    def second_moment(self):
        mu = np.asarray(self.mu, dtype=float)
        return float(np.dot(self.omega, np.asarray(self.sigma2) + mu**2))

    def sample(self, n, rng):
        comp = rng.choice(len(self.omega), size=n, p=np.asarray(self.omega, dtype=float))
        mu = np.asarray(self.mu, dtype=float)[comp]
        sd = np.sqrt(np.asarray(self.sigma2, dtype=float))[comp]
        return mu + sd * rng.standard_normal(n)

    def params(self):
        return {"omega": tuple(self.omega), "mu": tuple(self.mu), "sigma2": tuple(self.sigma2)}

    def with_params(self, omega=None, mu=None, sigma2=None, **_):
        return GaussianMixturePrior(tuple(self.omega if omega is None else omega),
                                    tuple(self.mu if mu is None else mu),
                                    tuple(self.sigma2 if sigma2 is None else sigma2))


@dataclass(frozen=True)
class SpikeSlabPrior(InputChannel):
    """(1 - pi) delta(w) + pi * slab(w); sum-product only."""

    pi: float = 0.1
    slab: InputChannel = field(default_factory=GaussianPrior)
    supports_max_sum = False

    def __post_init__(self):
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError(f"pi must lie in [0, 1], got {self.pi}")
        if isinstance(self.slab, SpikeSlabPrior):
            raise ValueError("nested spike-and-slab priors are not supported")

    def spg(self, r_hat, tau_r):
        return spike_slab_spg(r_hat, tau_r, self.pi, self.slab)

    def msg(self, r_hat, tau_r):
        raise ConfigurationError("spike-and-slab prior is not applicable in max-sum mode")

    def mean(self):
        return self.pi * self.slab.mean()

    def second_moment(self):
        return self.pi * self.slab.second_moment()

    def sample(self, n, rng):
        on = rng.random(n) < self.pi
        return np.where(on, self.slab.sample(n, rng), 0.0)

    def params(self):
        return {"pi": self.pi, **{f"slab_{k}": v for k, v in self.slab.params().items()}}

    def with_params(self, pi=None, **kw):
        slab_kw = {k[5:]: v for k, v in kw.items() if k.startswith("slab_")}
        return SpikeSlabPrior(self.pi if pi is None else pi, self.slab.with_params(**slab_kw))
