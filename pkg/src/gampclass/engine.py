"""The GAMP iteration (sum-product and max-sum), prediction, and the OneBitCS baseline."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp

from .channels.output import OutputChannel, ScalarMoments
from .channels.prior import (
    ConfigurationError,
    InputChannel,
    PriorMoments,
    SpikeSlabPrior,
)
from .data import Dataset

logger = logging.getLogger(__name__)

MODES = ("sum_product", "max_sum")


class GampDivergence(FloatingPointError):
    """Iterates became non-finite; ``trace`` holds the per-iteration record so far."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


@dataclass(frozen=True)
class GampConfig:
    mode: str = "sum_product"
    max_iter: int = 200
    tol: float = 1e-3
    damping: float = 0.9
    eps_var: float = 1e-11
    max_var: float = 1e11
    min_iter: int = 1
    #: start tau_w at 1 for every prior instead of the prior variance
    literal_init: bool = False
    #: replace |X|^2 by its scalar mean (memory saver)
    uniform_variance: bool = False
    #: keep every w_hat iterate on the result
    keep_history: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.eps_var < self.max_var:
            raise ValueError("variance floor/ceiling must satisfy 0 < eps_var < max_var")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class GampState:
    w_hat: np.ndarray
    tau_w: np.ndarray
    s_hat: np.ndarray
    p_hat: Optional[np.ndarray] = None
    tau_p: Optional[np.ndarray] = None
    z_hat: Optional[np.ndarray] = None
    tau_z: Optional[np.ndarray] = None
    r_hat: Optional[np.ndarray] = None
    tau_r: Optional[np.ndarray] = None
    k: int = 0
    #: damped weight iterate used to form r_hat (equals w_hat when beta = 1)
    w_bar: Optional[np.ndarray] = None
    tau_s: Optional[np.ndarray] = None

    def copy(self) -> "GampState":
        return GampState(**{k: (v.copy() if isinstance(v, np.ndarray) else v)
                            for k, v in self.__dict__.items()})


@dataclass
class GampResult:
    state: GampState
    converged: bool
    n_iter: int
    trace: List[dict] = field(default_factory=list)
    nonzero_prob: Optional[np.ndarray] = None
    prior_moments: Optional[PriorMoments] = None
    output_moments: Optional[ScalarMoments] = None
    history: Optional[List[np.ndarray]] = None

    @property
    def w_hat(self):
        """Denoiser output of the last iteration (undamped, keeps exact zeros)."""
        return self.state.w_hat

    @property
    def tau_w(self):
        return self.state.tau_w


def check_compatible(mode, output_channel, input_channel):
    if mode == "max_sum" and not input_channel.supports_max_sum:
        raise ConfigurationError(f"{type(input_channel).__name__} cannot be used in max-sum mode")


def initial_state(M, N, input_channel, config: GampConfig) -> GampState:
    tau0 = 1.0
    if not config.literal_init and isinstance(input_channel, SpikeSlabPrior):
        tau0 = max(input_channel.variance(), config.eps_var)
    return GampState(np.zeros(N), np.full(N, tau0), np.zeros(M))


class GampSolver:
    """Stateful GAMP iteration over one dataset.

    Channels may be swapped between calls to :meth:`step`, which is how the
    EM tuner implements its once-per-iteration cadence.
    """

    def __init__(self, X, y, output_channel: OutputChannel, input_channel: InputChannel,
                 config: GampConfig = GampConfig(), init_state: Optional[GampState] = None):
        M, N = X.shape
        if M < 1 or N < 1:
            raise ValueError(f"need at least one example and one feature, got X of shape {X.shape}")
        check_compatible(config.mode, output_channel, input_channel)
        self.X = X
        self.y = np.asarray(y, dtype=float)
        self.output_channel = output_channel
        self.input_channel = input_channel
        self.config = config
        if sp.issparse(X):
            self.S = X.multiply(X).tocsr()
        else:
            self.S = X * X
        if config.uniform_variance:
            self.S = float(self.S.sum()) / (M * N)
        self.state = init_state.copy() if init_state is not None else initial_state(M, N, input_channel, config)
        self.out_moments: Optional[ScalarMoments] = None
        self.prior_moments: Optional[PriorMoments] = None

    def _S_mv(self, v):
        if np.isscalar(self.S):
            return np.full(self.X.shape[0], self.S * v.sum())
        return self.S @ v

    def _S_rmv(self, v):
        if np.isscalar(self.S):
            return np.full(self.X.shape[1], self.S * v.sum())
        return self.S.T @ v

    def step(self) -> float:
        """One pass of the iteration; returns the relative change of w_hat.

        Damping follows the usual damped-GAMP arrangement: p_hat uses the
        latest denoiser output, while s_hat, tau_s and the weight iterate
        entering r_hat are convex combinations with their previous values.
        """
        cfg = self.config
        st = self.state
        lo, hi = cfg.eps_var, cfg.max_var
        beta = cfg.damping
        first = st.tau_s is None
        w_bar_old = st.w_hat if st.w_bar is None else st.w_bar
        tau_p = np.clip(self._S_mv(st.tau_w), lo, hi)
        p_hat = self.X @ st.w_hat - st.s_hat * tau_p
        if cfg.mode == "sum_product":
            out = self.output_channel.spg(self.y, p_hat, tau_p)
        else:
            out = self.output_channel.msg(self.y, p_hat, tau_p)
        tau_s_new = np.clip(1.0 / tau_p - out.tau_z / tau_p**2, lo, hi)
        s_new = (out.z_hat - p_hat) / tau_p
        if first:
            # nothing to average with yet
            s_hat, tau_s, w_bar = s_new, tau_s_new, st.w_hat
        else:
            s_hat = beta * s_new + (1.0 - beta) * st.s_hat
            tau_s = beta * tau_s_new + (1.0 - beta) * st.tau_s
            w_bar = beta * st.w_hat + (1.0 - beta) * w_bar_old
        tau_r = np.clip(1.0 / self._S_rmv(tau_s), lo, hi)
        r_hat = w_bar + tau_r * (self.X.T @ s_hat)
        if cfg.mode == "sum_product":
            pm = self.input_channel.spg(r_hat, tau_r)
        else:
            pm = self.input_channel.msg(r_hat, tau_r)
        w_new = pm.w_hat
        tau_w = np.clip(pm.tau_w, lo, hi)
        if not (np.all(np.isfinite(w_new)) and np.all(np.isfinite(s_hat))):
            raise GampDivergence(f"non-finite iterate at iteration {st.k + 1}")
        num = np.linalg.norm(w_new - st.w_hat)
        den = np.linalg.norm(w_new)
        if num == 0 and den == 0:
            # w_hat stuck at zero: only stop once the variances settle too
            rel = float(np.linalg.norm(tau_w - st.tau_w) / np.linalg.norm(tau_w))
        else:
            rel = num / den if den > 0 else np.inf
        self.state = GampState(w_new, tau_w, s_hat, p_hat, tau_p, out.z_hat, out.tau_z,
                               r_hat, tau_r, st.k + 1, w_bar, tau_s)
        self.out_moments = out
        self.prior_moments = pm
        return rel

    def objective(self) -> float:
        """Regularized loss sum_m f(x_m'w) + sum_n f(w_n) at the current w_hat."""
        w = self.state.w_hat
        z = self.X @ w
        return float(np.sum(self.output_channel.loss(self.y, z)) + np.sum(self.input_channel.penalty(w)))

    def run(self, max_iter=None, callback: Optional[Callable] = None) -> GampResult:
        cfg = self.config
        max_iter = cfg.max_iter if max_iter is None else max_iter
        trace = []
        history = [] if cfg.keep_history else None
        converged = False
        for _ in range(max_iter):
            try:
                rel = self.step()
            except GampDivergence as exc:
                exc.trace = trace
                raise
            rec = {"k": self.state.k, "rel_change": rel}
            if cfg.mode == "max_sum":
                rec["objective"] = self.objective()
            trace.append(rec)
            if history is not None:
                history.append(self.state.w_hat.copy())
            if callback is not None:
                callback(self)
            if rel < cfg.tol and len(trace) >= cfg.min_iter:
                converged = True
                break
        return self.result(converged, trace, history)

    def result(self, converged, trace, history=None) -> GampResult:
        pm = self.prior_moments
        nz = None
        if pm is not None and isinstance(self.input_channel, SpikeSlabPrior):
            nz = pm.nonzero_prob
        return GampResult(self.state.copy(), converged, len(trace), trace, nz, pm,
                          self.out_moments, history)


def run_gamp(dataset: Dataset, output_channel: OutputChannel, input_channel: InputChannel,
             config: GampConfig = GampConfig(), init_state: Optional[GampState] = None) -> GampResult:
    """Run GAMP to convergence (relative w_hat change below ``config.tol``)."""
    solver = GampSolver(dataset.X, dataset.y, output_channel, input_channel, config, init_state)
    result = solver.run()
    logger.debug("gamp %s: %d iterations, converged=%s", config.mode, result.n_iter, result.converged)
    return result


def test_score_moments(w_hat, tau_w, X_test):
    """Score mean x'w and variance sum_n x_n^2 tau_w,n for held-out rows."""
    z = X_test @ w_hat
    if sp.issparse(X_test):
        tz = X_test.multiply(X_test) @ tau_w
    else:
        tz = (X_test * X_test) @ tau_w
    return np.asarray(z).ravel(), np.asarray(tz).ravel()


def predict(w_hat, tau_w, X_test, output_channel: OutputChannel):
    """Labels and P(y=+1) for test rows; a probability of exactly 1/2 maps to +1."""
    z, tz = test_score_moments(w_hat, tau_w, X_test)
    prob = np.asarray(output_channel.predict_proba(z, tz), dtype=float)
    labels = np.where(prob >= 0.5, 1.0, -1.0)
    return labels, prob


def one_bit_cs(dataset: Dataset, K: int) -> np.ndarray:
    """Keep the K largest-magnitude entries of X'y (ties go to the lower index)."""
    X, y = dataset.X, dataset.y
    N = X.shape[1]
    if not 1 <= K <= N:
        raise ValueError(f"need 1 <= K <= N, got K={K}")
    corr = np.asarray(X.T @ y, dtype=float).ravel()
    keep = np.argsort(-np.abs(corr), kind="stable")[:K]
    w = np.zeros(N)
    w[keep] = corr[keep]
    return w


def write_trace_csv(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "rel_change", "objective"])
        for rec in trace:
            w.writerow([rec["k"], repr(rec["rel_change"]), repr(rec.get("objective", ""))])
