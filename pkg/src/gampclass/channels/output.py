"""Activation-function (output) channels.

Each channel maps the GAMP pseudo-prior ``N(p_hat, tau_p)`` on a score and
the observed label ``y`` to either posterior moments (sum-product mode) or a
proximal pair (max-sum mode).  Labels are arrays in {-1, +1}.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .._numerics import (
    gauss_expectation,
    log_norm_cdf,
    log_sigmoid,
    logistic_gauss_expectation,
    mills,
    norm_cdf,
    norm_logpdf,
    truncnorm_lower_moments,
    truncnorm_upper_moments,
)


@dataclass
class ScalarMoments:
    """Per-example output of a channel evaluation.

    ``log_scale`` is the log normalizer ``log C_y`` of the tilted density.
    Channels may attach extras: ``xi`` (logistic variational parameter),
    ``corrupt_prob`` (robust wrapper) and ``converged`` flags.
    """

    z_hat: np.ndarray
    tau_z: np.ndarray
    log_scale: Optional[np.ndarray] = None
    xi: Optional[np.ndarray] = None
    corrupt_prob: Optional[np.ndarray] = None
    converged: Optional[np.ndarray] = field(default=None, repr=False)


def _as_arrays(y, p_hat, tau_p):
    y = np.asarray(y, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    tau_p = np.asarray(tau_p, dtype=float)
    return np.broadcast_arrays(y, p_hat, tau_p)


# ---------------------------------------------------------------------------
# sum-product kernels


def probit_spg(y, p_hat, tau_p, v):
    """Posterior mean/variance of Z ~ N(p_hat, tau_p) given y under Phi(yz/sqrt(v))."""
    y, p_hat, tau_p = _as_arrays(y, p_hat, tau_p)
    s = np.sqrt(v + tau_p)
    c = p_hat / s
    lam = mills(y * c)  # phi(c) / Phi(yc)
    z_hat = p_hat + y * tau_p * lam / s
    tau_z = tau_p - tau_p**2 / (v + tau_p) * lam * (y * c + lam)
    tau_z = np.maximum(tau_z, 0.0)
    return ScalarMoments(z_hat, tau_z, log_norm_cdf(y * c))


def _lambda_xi(xi, alpha):
    ax = alpha * xi
    small = np.abs(ax) < 1e-6
    safe = np.where(small, 1.0, xi)
    lam = alpha / (2.0 * safe) * (expit(alpha * safe) - 0.5)
    return np.where(small, alpha * alpha / 8.0, lam)


def logistic_spg(y, p_hat, tau_p, alpha, tol=1e-9, max_iter=100):
    """Variational moments for the logistic activation ``1/(1+exp(-alpha*y*z))``.

    Runs the bound-tightening fixed point on ``xi`` elementwise.  Entries that
    have not met ``tol`` after ``max_iter`` sweeps keep their last iterate and
    are marked in ``converged``.  ``log_scale`` is the exact log normalizer
    ``log E[sigmoid(alpha*y*Z)]`` (the variational moments are not exact).
    """
    y, p_hat, tau_p = _as_arrays(y, p_hat, tau_p)
    xi = np.sqrt(tau_p + p_hat**2)
    done = np.zeros(xi.shape, dtype=bool)
    tau_z = tau_p.copy()
    z_hat = p_hat.copy()
    for _ in range(max_iter):
        lam = _lambda_xi(xi, alpha)
        tau_z = tau_p / (1.0 + 2.0 * tau_p * lam)
        z_hat = tau_z * (p_hat / tau_p + alpha * y / 2.0)
        xi_new = np.sqrt(tau_z + z_hat**2)
        done = np.abs(xi_new - xi) < tol
        xi = xi_new
        if done.all():
            break
    log_scale = np.log(np.maximum(logistic_gauss_expectation(alpha * y, p_hat, tau_p), 1e-300))
    return ScalarMoments(z_hat, tau_z, log_scale, xi=xi, converged=done)


def _hinge_pieces(t, tau_p):
    """Pieces of the y=+1 hinge posterior with prior N(t, tau_p)."""
    sq = np.sqrt(tau_p)
    a = ((1.0 - tau_p) - t) / sq
    b = (t - 1.0) / sq
    delta = t - 1.0 + tau_p / 2.0
    log_lo = delta + log_norm_cdf(a)
    log_hi = log_norm_cdf(b)
    log_c = np.logaddexp(log_lo, log_hi)
    w_lo = np.exp(log_lo - log_c)
    w_hi = np.exp(log_hi - log_c)
    mu_lo, v_lo = truncnorm_upper_moments(t + tau_p, sq, a)
    mu_hi, v_hi = truncnorm_lower_moments(t, sq, -b)
    return w_lo, w_hi, mu_lo, v_lo, mu_hi, v_hi, log_c


def hinge_spg(y, p_hat, tau_p):
    """Closed-form moments for the (unnormalized) hinge likelihood exp(-max(0, 1-yz))."""
    y, p_hat, tau_p = _as_arrays(y, p_hat, tau_p)
    w_lo, w_hi, mu_lo, v_lo, mu_hi, v_hi, log_c = _hinge_pieces(y * p_hat, tau_p)
    m1 = w_lo * mu_lo + w_hi * mu_hi
    m2 = w_lo * (v_lo + mu_lo**2) + w_hi * (v_hi + mu_hi**2)
    tau_z = np.maximum(m2 - m1**2, 0.0)
    return ScalarMoments(y * m1, tau_z, log_c)


def robust_spg(y, p_hat, tau_p, gamma, inner):
    """Moments under ``gamma + (1 - 2 gamma) p*(y|z)`` given the inner channel."""
    y, p_hat, tau_p = _as_arrays(y, p_hat, tau_p)
    base = inner.spg(y, p_hat, tau_p)
    c_star = np.exp(base.log_scale)
    if gamma == 0.0:
        c_y = np.zeros_like(c_star)
    else:
        c_y = gamma / (gamma + (1.0 - 2.0 * gamma) * c_star)
    z_hat = c_y * p_hat + (1.0 - c_y) * base.z_hat
    tau_z = c_y * (tau_p + p_hat**2) + (1.0 - c_y) * (base.tau_z + base.z_hat**2) - z_hat**2
    tau_z = np.maximum(tau_z, 0.0)
    # posterior probability that the label was flipped; C*_{-y} = 1 - C*_y
    flip = gamma * (1.0 - c_star)
    keep = (1.0 - gamma) * c_star
    denom = flip + keep
    rho = np.where(denom > 0, flip / np.where(denom > 0, denom, 1.0), 0.5)
    log_scale = np.log(gamma + (1.0 - 2.0 * gamma) * c_star)
    return ScalarMoments(z_hat, tau_z, log_scale, xi=base.xi, corrupt_prob=rho)


# ---------------------------------------------------------------------------
# channel objects


class OutputChannel:
    """Base class for activation functions p(y|z)."""

    #: whether -log p(y|.) is convex (prox needs no bracket search)
    convex = True

    def spg(self, y, p_hat, tau_p) -> ScalarMoments:
        raise NotImplementedError

    def msg(self, y, p_hat, tau_p) -> ScalarMoments:
        return msg_prox(self, y, p_hat, tau_p)

    def loss_derivs(self, y, u):
        """First and second derivative of f(u) = -log p(y|u)."""
        raise NotImplementedError

    def loss(self, y, u):
        return -self.log_likelihood(y, u)

    def log_likelihood(self, y, z):
        raise NotImplementedError

    def prob_positive(self, z):
        """p(y=+1 | z) for a deterministic score."""
        return np.exp(self.log_likelihood(np.ones_like(np.asarray(z, dtype=float)), z))

    def predict_proba(self, z_hat, tau_z):
        raise NotImplementedError

    def sample(self, z, rng):
        """Draw labels given true scores."""
        z = np.asarray(z, dtype=float)
        p = self.prob_positive(z)
        return np.where(rng.random(z.shape) < p, 1.0, -1.0)

    def params(self) -> dict:
        return {}

    def with_params(self, **kw) -> "OutputChannel":
        raise NotImplementedError


@dataclass(frozen=True)
class ProbitChannel(OutputChannel):
    """p(y|z) = Phi(y z / sqrt(v))."""

    v: float = 1.0

    def __post_init__(self):
        if not self.v > 0:
            raise ValueError(f"probit variance must be positive, got {self.v}")

    def spg(self, y, p_hat, tau_p):
        return probit_spg(y, p_hat, tau_p, self.v)

    def log_likelihood(self, y, z):
        return log_norm_cdf(np.asarray(y) * np.asarray(z) / np.sqrt(self.v))

    def loss_derivs(self, y, u):
        sv = np.sqrt(self.v)
        c = y * u / sv
        lam = mills(c)
        return -(y / sv) * lam, lam * (c + lam) / self.v

    def predict_proba(self, z_hat, tau_z):
        return norm_cdf(np.asarray(z_hat) / np.sqrt(self.v + np.asarray(tau_z)))

    def sample(self, z, rng):
        z = np.asarray(z, dtype=float)
        e = rng.standard_normal(z.shape) * np.sqrt(self.v)
        return np.where(z - e >= 0, 1.0, -1.0)

    def params(self):
        return {"v": self.v}

    def with_params(self, v=None, **_):
        return ProbitChannel(self.v if v is None else v)


@dataclass(frozen=True)
class LogisticChannel(OutputChannel):
    """p(y|z) = 1 / (1 + exp(-alpha y z))."""

    alpha: float = 1.0
    tol: float = 1e-9
    max_iter: int = 100

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"logistic scale must be positive, got {self.alpha}")

    def spg(self, y, p_hat, tau_p):
        return logistic_spg(y, p_hat, tau_p, self.alpha, self.tol, self.max_iter)

    def log_likelihood(self, y, z):
        return log_sigmoid(self.alpha * np.asarray(y) * np.asarray(z))

    def loss_derivs(self, y, u):
        a = self.alpha
        s = expit(a * y * u)
        return -a * y * (1.0 - s), a * a * s * (1.0 - s)

    def predict_proba(self, z_hat, tau_z):
        return logistic_gauss_expectation(self.alpha, z_hat, tau_z)

    def params(self):
        return {"alpha": self.alpha}

    def with_params(self, alpha=None, **_):
        return LogisticChannel(self.alpha if alpha is None else alpha, self.tol, self.max_iter)


@dataclass(frozen=True)
class HingeChannel(OutputChannel):
    """Unnormalized hinge activation exp(-max(0, 1 - y z))."""

    def spg(self, y, p_hat, tau_p):
        return hinge_spg(y, p_hat, tau_p)

    def msg(self, y, p_hat, tau_p):
        y, p_hat, tau_p = _as_arrays(y, p_hat, tau_p)
        t = y * p_hat
        u = np.where(t + tau_p < 1.0, t + tau_p, np.where(t > 1.0, t, 1.0))
        # flat pieces have zero curvature; the kink keeps tau_p as well
        return ScalarMoments(y * u, tau_p.copy())

    def log_likelihood(self, y, z):
        return -np.maximum(0.0, 1.0 - np.asarray(y) * np.asarray(z))

    def loss_derivs(self, y, u):
        y = np.asarray(y, dtype=float)
        g = np.where(y * u < 1.0, -y, 0.0)
        return g, np.zeros_like(g)

    def prob_positive(self, z):
        lp = self.log_likelihood(1.0, z)
        lm = self.log_likelihood(-1.0, z)
        return np.exp(lp - np.logaddexp(lp, lm))

    def predict_proba(self, z_hat, tau_z):
        z_hat = np.asarray(z_hat, dtype=float)
        tau_z = np.asarray(tau_z, dtype=float)
        point = tau_z <= 0
        tz = np.where(point, 1.0, tau_z)
        lp = hinge_spg(1.0, z_hat, tz).log_scale
        lm = hinge_spg(-1.0, z_hat, tz).log_scale
        prob = np.exp(lp - np.logaddexp(lp, lm))
        return np.where(point, self.prob_positive(z_hat), prob)

    def with_params(self, **_):
        return self


@dataclass(frozen=True)
class RobustChannel(OutputChannel):
    """Label-flip mixture ``gamma + (1 - 2 gamma) p*(y|z)`` around an inner channel."""

    inner: OutputChannel = field(default_factory=ProbitChannel)
    gamma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 0.5:
            raise ValueError(f"corruption probability must lie in [0, 1/2), got {self.gamma}")
        if isinstance(self.inner, (HingeChannel, RobustChannel)):
            raise ValueError("robust wrapper needs a normalized probit or logistic inner channel")

    @property
    def convex(self):
        return self.gamma == 0.0

    def spg(self, y, p_hat, tau_p):
        return robust_spg(y, p_hat, tau_p, self.gamma, self.inner)

    def log_likelihood(self, y, z):
        p = np.exp(self.inner.log_likelihood(y, z))
        return np.log(self.gamma + (1.0 - 2.0 * self.gamma) * p)

    def _inner_prob_derivs(self, y, u):
        inner = self.inner
        if isinstance(inner, ProbitChannel):
            sv = np.sqrt(inner.v)
            c = y * u / sv
            pdf = np.exp(norm_logpdf(c))
            return norm_cdf(c), (y / sv) * pdf, -(c / inner.v) * pdf
        a = inner.alpha
        s = expit(a * y * u)
        d1 = a * y * s * (1.0 - s)
        return s, d1, a * a * s * (1.0 - s) * (1.0 - 2.0 * s)

    def loss_derivs(self, y, u):
        if self.gamma == 0.0:
            return self.inner.loss_derivs(y, u)
        k = 1.0 - 2.0 * self.gamma
        p, d1, d2 = self._inner_prob_derivs(y, u)
        den = self.gamma + k * p
        g = -k * d1 / den
        return g, -k * d2 / den + g * g

    def predict_proba(self, z_hat, tau_z):
        return self.gamma + (1.0 - 2.0 * self.gamma) * self.inner.predict_proba(z_hat, tau_z)

    def sample(self, z, rng):
        y = self.inner.sample(z, rng)
        flip = rng.random(y.shape) < self.gamma
        return np.where(flip, -y, y)

    def params(self):
        return {"gamma": self.gamma, **self.inner.params()}

    def with_params(self, gamma=None, **kw):
        return RobustChannel(self.inner.with_params(**kw), self.gamma if gamma is None else gamma)


# ---------------------------------------------------------------------------
# max-sum


def _bisect_newton(grad_curv, lo, hi, p_hat, tau_p, max_iter=200):
    """Root of g(u) = f'(u) + (u - p_hat)/tau_p on brackets with g(lo) <= 0 <= g(hi)."""
    u = 0.5 * (lo + hi)
    for _ in range(max_iter):
        f1, f2 = grad_curv(u)
        g = f1 + (u - p_hat) / tau_p
        lo = np.where(g < 0, u, lo)
        hi = np.where(g > 0, u, hi)
        dg = f2 + 1.0 / tau_p
        newton = u - g / np.where(dg > 0, dg, 1.0)
        inside = (dg > 0) & (newton > lo) & (newton < hi)
        u_next = np.where(inside, newton, 0.5 * (lo + hi))
        u_next = np.where(g == 0, u, u_next)
        width = hi - lo
        if np.all((np.abs(g) * tau_p < 1e-15 * (1.0 + np.abs(u))) | (width <= 1e-15 * (1.0 + np.abs(u)))):
            return u
        u = u_next
    return u


def _first_sign_change(grad, p_hat, tau_p, direction, step, n_grid=64, max_expand=60):
    """Bracket the stationary point nearest ``p_hat`` along ``direction``."""
    lo = np.array(p_hat, dtype=float)
    hi = lo.copy()
    found = np.zeros(lo.shape, dtype=bool)
    prev = lo.copy()
    span = np.maximum(step, 1e-12 * (1.0 + np.abs(p_hat)))
    ts = np.linspace(0.0, 1.0, n_grid + 1)[1:]
    start = lo.copy()
    for _ in range(max_expand):
        for t in ts:
            u = start + direction * span * t
            g = grad(u) + (u - p_hat) / tau_p
            hit = (~found) & (direction * g >= 0)
            hi = np.where(hit, u, hi)
            lo = np.where(hit, prev, lo)
            found |= hit
            prev = np.where(found, prev, u)
        if found.all():
            break
        start = np.where(found, start, start + direction * span)
        span = span * 2.0
    if not found.all():
        raise FloatingPointError("prox bracket search failed")
    # orient brackets so that g(lo) <= 0 <= g(hi)
    a = np.where(direction > 0, lo, hi)
    b = np.where(direction > 0, hi, lo)
    return a, b


def _global_robust_min(channel, y, p_hat, tau_p, direction, z_near, grad_curv, n_grid=512):
    """Compare the nearest local minimum with the farthest one inside the trust radius.

    The loss is bounded, so any minimizer sits within sqrt(2 tau log((1-g)/g))
    of p_hat, and f' is a single bump so there are at most two local minima.
    """
    gam = channel.gamma
    radius = np.sqrt(2.0 * tau_p * np.log((1.0 - gam) / gam)) * 1.01 + 1e-12
    ts = np.linspace(0.0, 1.0, n_grid + 1)
    u = p_hat[..., None] + direction[..., None] * radius[..., None] * ts
    yy = np.broadcast_to(y[..., None], u.shape)
    g = channel.loss_derivs(yy, u)[0] + (u - p_hat[..., None]) / tau_p[..., None]
    g = direction[..., None] * g
    up = (g[..., :-1] < 0) & (g[..., 1:] >= 0)
    has = up.any(axis=-1)
    if not has.any():
        return z_near
    last = n_grid - 1 - np.argmax(up[..., ::-1], axis=-1)
    a = np.take_along_axis(u, last[..., None], -1)[..., 0]
    b = np.take_along_axis(u, last[..., None] + 1, -1)[..., 0]
    lo = np.where(direction > 0, a, b)
    hi = np.where(direction > 0, b, a)
    lo = np.where(has, lo, z_near)
    hi = np.where(has, hi, z_near)
    z_far = _bisect_newton(grad_curv, lo, hi, p_hat, tau_p)

    def obj(z):
        return channel.loss(y, z) + (z - p_hat) ** 2 / (2.0 * tau_p)

    return np.where(has & (obj(z_far) < obj(z_near)), z_far, z_near)


def msg_prox(channel, y, p_hat, tau_p):
    """Max-sum step: ``z_hat = argmin_u f(u) + (u-p_hat)^2/(2 tau_p)`` and its curvature variance."""
    if isinstance(channel, HingeChannel):
        return channel.msg(y, p_hat, tau_p)
    y, p_hat, tau_p = _as_arrays(y, p_hat, tau_p)
    y = y.copy()
    p_hat = p_hat.copy()
    tau_p = tau_p.copy()

    def grad_curv(u):
        return channel.loss_derivs(y, u)

    def grad(u):
        return channel.loss_derivs(y, u)[0]

    f1, _ = grad_curv(p_hat)
    direction = np.where(f1 > 0, -1.0, 1.0)
    step = tau_p * np.abs(f1)
    if channel.convex:
        lo = np.where(direction > 0, p_hat, p_hat - step)
        hi = np.where(direction > 0, p_hat + step, p_hat)
    else:
        lo, hi = _first_sign_change(grad, p_hat, tau_p, direction, step)
    z_hat = _bisect_newton(grad_curv, lo, hi, p_hat, tau_p)
    if not channel.convex:
        z_hat = _global_robust_min(channel, y, p_hat, tau_p, direction, z_hat, grad_curv)
    z_hat = np.where(f1 == 0, p_hat, z_hat)
    _, f2 = grad_curv(z_hat)
    tau_z = tau_p / (1.0 + tau_p * f2)
    return ScalarMoments(z_hat, tau_z)


def predict_proba(channel, z_hat, tau_z):
    """Probability of y=+1 under N(z_hat, tau_z) uncertainty on the score."""
    return channel.predict_proba(z_hat, tau_z)


def expected_log_likelihood(channel, y, p_hat, tau_p, order=63):
    """E_q[log p(y|Z)] under the sum-product tilted posterior q(z) (Gauss-Hermite)."""
    y, p_hat, tau_p = _as_arrays(y, p_hat, tau_p)
    ls = channel.spg(y, p_hat, tau_p).log_scale

    def integrand(z):
        ll = channel.log_likelihood(y[..., None], z)
        return ll * np.exp(ll - ls[..., None])

    return gauss_expectation(integrand, p_hat, tau_p, order)
