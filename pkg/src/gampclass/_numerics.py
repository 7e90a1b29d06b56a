"""Scalar numerical kernels shared by the channel modules.

Everything here is vectorized over numpy arrays and works in the log
domain wherever a normal CDF can underflow.
"""
import numpy as np
from scipy.special import erfcx, expit, log_ndtr, ndtr

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def norm_logpdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - LOG_SQRT_2PI


def norm_pdf(x):
    return np.exp(norm_logpdf(x))


def norm_cdf(x):
    return ndtr(x)


def log_norm_cdf(x):
    return log_ndtr(x)


def mills(x):
    """Inverse Mills ratio ``phi(x) / Phi(x)``, stable for very negative x."""
    x = np.asarray(x, dtype=float)
    neg = x < 0
    # Phi(x) = erfcx(-x/sqrt2) phi(x) sqrt(pi/2) for x < 0, so the Gaussian factor cancels
    tail = np.sqrt(2.0 / np.pi) / erfcx(-np.where(neg, x, 0.0) / np.sqrt(2.0))
    head = np.exp(norm_logpdf(np.where(neg, 0.0, x)) - log_ndtr(np.where(neg, 0.0, x)))
    return np.where(neg, tail, head)


def gauss_logpdf(x, mean, var):
    """Log density of N(mean, var) evaluated at x."""
    d = np.asarray(x, dtype=float) - mean
    return -0.5 * d * d / var - 0.5 * np.log(2.0 * np.pi * var)


def truncnorm_upper_moments(mean, std, b):
    """Mean and variance of N(mean, std^2) truncated to ``(-inf, mean + b*std)``.

    ``b`` is the standardized truncation point.
    """
    lam = mills(b)
    m = mean - std * lam
    v = std * std * np.maximum(1.0 - lam * (lam + b), 0.0)
    return m, v


def truncnorm_lower_moments(mean, std, a):
    """Mean and variance of N(mean, std^2) truncated to ``(mean + a*std, inf)``."""
    lam = mills(-a)
    m = mean + std * lam
    v = std * std * np.maximum(1.0 - lam * (lam - a), 0.0)
    return m, v


_GH_CACHE = {}


def hermite_nodes(order=63):
    """Probabilists' Gauss-Hermite nodes and weights normalized to sum to one."""
    if order not in _GH_CACHE:
        x, w = np.polynomial.hermite_e.hermegauss(order)
        _GH_CACHE[order] = (x, w / w.sum())
    return _GH_CACHE[order]


_GL_CACHE = {}


def _legendre(order=96):
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


def gauss_expectation(func, mean, var, order=63):
    """E[func(Z)] for Z ~ N(mean, var) by Gauss-Hermite quadrature.

    ``mean`` and ``var`` broadcast together; the node axis is appended last.
    """
    x, w = hermite_nodes(order)
    mean = np.asarray(mean, dtype=float)[..., None]
    std = np.sqrt(np.asarray(var, dtype=float))[..., None]
    return np.sum(func(mean + std * x) * w, axis=-1)


def logistic_gauss_expectation(scale, mean, var):
    """E[sigmoid(scale * Z)] for Z ~ N(mean, var).

    Plain Gauss-Hermite loses accuracy once the sigmoid is sharp relative to
    the Gaussian width, so that regime is split into the step function
    (exact via Phi) plus the smooth, odd remainder ``sigmoid(u) - H(u)``
    integrated by Gauss-Legendre on each half line.
    """
    scale = np.asarray(scale, dtype=float)
    mean, var = np.broadcast_arrays(np.asarray(mean, dtype=float),
                                    np.asarray(var, dtype=float))
    mu = scale * mean
    s = np.abs(scale) * np.sqrt(var)
    out = np.empty(np.broadcast(mu, s).shape)
    mu, s = np.broadcast_arrays(mu, s)
    smooth = s <= 1.0
    if np.any(smooth):
        out[smooth] = gauss_expectation(expit, mu[smooth], s[smooth] ** 2)
    sharp = ~smooth
    if np.any(sharp):
        ms, ss = mu[sharp][:, None], s[sharp][:, None]
        t, wt = _legendre()
        u = 20.0 * (t + 1.0)  # (0, 40)
        wu = 20.0 * wt
        dens_pos = np.exp(gauss_logpdf(u, ms, ss * ss))
        dens_neg = np.exp(gauss_logpdf(-u, ms, ss * ss))
        # sigmoid(u) - 1 = -sigmoid(-u) on u > 0; sigmoid(-u) - 0 on u < 0
        corr = np.sum(wu * expit(-u) * (dens_neg - dens_pos), axis=-1)
        out[sharp] = ndtr(mu[sharp] / s[sharp]) + corr
    return np.clip(out, 0.0, 1.0)


def log_sigmoid(x):
    """log(1 / (1 + exp(-x))) without overflow."""
    x = np.asarray(x, dtype=float)
    return -np.logaddexp(0.0, -x)
