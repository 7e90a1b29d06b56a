"""scikit-learn style wrappers around (EM-)GAMP and the OneBitCS baseline."""
from __future__ import annotations

import json
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import type_of_target
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .channels import (
    ElasticNetPrior,
    GaussianMixturePrior,
    GaussianPrior,
    HingeChannel,
    LogisticChannel,
    ProbitChannel,
    RobustChannel,
    SpikeSlabPrior,
)
from .data import Dataset
from .em import EMConfig, em_fit
from .engine import GampConfig, one_bit_cs, predict as gamp_predict

ACTIVATIONS = ("probit", "logistic", "hinge")
PRIORS = ("gaussian", "laplacian", "elastic_net", "spike_slab", "gaussian_mixture")


def make_output_channel(activation="probit", v=1.0, alpha=1.0, gamma=None):
    """Activation by name; a non-None ``gamma`` wraps it in the label-flip model."""
    if activation == "probit":
        ch = ProbitChannel(float(v))
    elif activation == "logistic":
        ch = LogisticChannel(float(alpha))
    elif activation == "hinge":
        ch = HingeChannel()
    else:
        raise ValueError(f"unknown activation {activation!r}; choose from {ACTIVATIONS}")
    if gamma is not None:
        ch = RobustChannel(ch, float(gamma))
    return ch


def make_input_channel(prior="spike_slab", pi=0.1, mu=0.0, sigma2=1.0, lambda1=1.0, lambda2=0.0,
                       omega=None):
    """Weight prior by name.  ``mu``/``sigma2`` describe the (slab) Gaussian."""
    if prior == "gaussian":
        return GaussianPrior(float(mu), float(sigma2))
    if prior == "laplacian":
        return ElasticNetPrior(float(lambda1), 0.0)
    if prior == "elastic_net":
        return ElasticNetPrior(float(lambda1), float(lambda2))
    if prior == "spike_slab":
        return SpikeSlabPrior(float(pi), GaussianPrior(float(mu), float(sigma2)))
    if prior == "gaussian_mixture":
        mus = np.atleast_1d(np.asarray(mu, dtype=float))
        s2 = np.broadcast_to(np.asarray(sigma2, dtype=float), mus.shape)
        om = np.full(mus.size, 1.0 / mus.size) if omega is None else np.asarray(omega, dtype=float)
        return GaussianMixturePrior(tuple(om), tuple(mus), tuple(s2))
    raise ValueError(f"unknown prior {prior!r}; choose from {PRIORS}")


def _binary_labels(y):
    kind = type_of_target(y)
    if kind not in ("binary", "multiclass"):
        raise ValueError(f"labels must be binary, got target type {kind!r}")
    classes = np.unique(y)
    if classes.size != 2:
        raise ValueError(f"need exactly two classes, got {classes.size}")
    return classes, np.where(y == classes[1], 1.0, -1.0)


class GAMPClassifier(ClassifierMixin, BaseEstimator):
    """Linear classifier trained by generalized approximate message passing.

    Parameters
    ----------
    activation : {'probit', 'logistic', 'hinge'}
        Activation function p(y|z).
    prior : {'gaussian', 'laplacian', 'elastic_net', 'spike_slab', 'gaussian_mixture'}
        Weight prior (or regularizer in max-sum mode).
    mode : {'sum_product', 'max_sum'}
        Posterior-mean (MMSE) or MAP inference.
    v, alpha : float
        Probit noise variance and logistic scale.
    gamma : float or None
        Label-flip probability.  ``None`` disables the robust wrapper.
    pi, mu, sigma2 : float
        Spike-and-slab activity and slab (or Gaussian prior) mean and variance.
    lambda1, lambda2 : float
        L1 and L2 weights of the elastic-net prior.
    tune : iterable of str
        Hyperparameters learned by EM, e.g. ``('pi', 'v')``.  Names follow
        the channel parameter names (``slab_sigma2`` for the slab variance
        of a spike-and-slab prior).
    em_iters, cadence :
        See :class:`gampclass.em.EMConfig`.
    damping, max_iter, tol :
        See :class:`gampclass.engine.GampConfig`.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
        Weight estimate.
    coef_var_ : ndarray of shape (n_features,)
        Posterior variance (sum-product) or prox curvature (max-sum).
    support_prob_ : ndarray or None
        Posterior support probabilities for the spike-and-slab prior.
    theta_ : dict
        Final channel hyperparameters.
    """

    def __init__(self, activation="probit", prior="spike_slab", mode="sum_product",
                 v=1.0, alpha=1.0, gamma=None, pi=0.1, mu=0.0, sigma2=1.0,
                 lambda1=1.0, lambda2=0.0, tune=(), em_iters=5, cadence="auto",
                 damping=0.9, max_iter=200, tol=1e-3):
        self.activation = activation
        self.prior = prior
        self.mode = mode
        self.v = v
        self.alpha = alpha
        self.gamma = gamma
        self.pi = pi
        self.mu = mu
        self.sigma2 = sigma2
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.tune = tune
        self.em_iters = em_iters
        self.cadence = cadence
        self.damping = damping
        self.max_iter = max_iter
        self.tol = tol

    def _channels(self):
        out = make_output_channel(self.activation, self.v, self.alpha, self.gamma)
        inp = make_input_channel(self.prior, self.pi, self.mu, self.sigma2, self.lambda1, self.lambda2)
        return out, inp

    def _em_config(self):
        gcfg = GampConfig(mode=self.mode, max_iter=self.max_iter, tol=self.tol, damping=self.damping)
        return EMConfig(em_iters=self.em_iters, gamp=gcfg, cadence=self.cadence)

    def fit(self, X, y, init_state=None):
        X, y = check_X_y(X, y, accept_sparse="csr", dtype=np.float64)
        self.classes_, ypm = _binary_labels(y)
        out, inp = self._channels()
        res = em_fit(Dataset(X, ypm), out, inp, tuple(self.tune or ()), self._em_config(), init_state)
        self._set_fitted(res.result.w_hat, res.result.tau_w, res.result.nonzero_prob,
                         res.theta.values, res.output_channel)
        self.n_iter_ = res.result.n_iter
        self.converged_ = bool(res.result.converged)
        self.em_flags_ = list(res.flags)
        self.state_ = res.result.state
        self.trace_ = list(res.result.trace)
        return self

    def _set_fitted(self, coef, coef_var, support_prob, theta, output_channel):
        self.coef_ = np.asarray(coef, dtype=float)
        self.coef_var_ = np.asarray(coef_var, dtype=float)
        self.support_prob_ = None if support_prob is None else np.asarray(support_prob, dtype=float)
        self.theta_ = dict(theta)
        self.output_channel_ = output_channel
        self.n_features_in_ = self.coef_.size

    def _check_X(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, accept_sparse="csr", dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return X

    def decision_function(self, X):
        X = self._check_X(X)
        return np.asarray(X @ self.coef_).ravel()

    def predict_proba(self, X):
        X = self._check_X(X)
        _, p = gamp_predict(self.coef_, self.coef_var_, X, self.output_channel_)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        X = self._check_X(X)
        labels, _ = gamp_predict(self.coef_, self.coef_var_, X, self.output_channel_)
        return self.classes_[(labels > 0).astype(int)]

    @property
    def n_selected_(self):
        """Estimated sparsity: support probability above 1/2, else nonzero count."""
        check_is_fitted(self, "coef_")
        if self.support_prob_ is not None:
            return int(np.sum(self.support_prob_ > 0.5))
        return int(np.count_nonzero(self.coef_))

    # -- persistence ---------------------------------------------------------

    def to_dict(self):
        check_is_fitted(self, "coef_")
        params = self.get_params()
        params["tune"] = list(params["tune"] or ())
        return {
            "params": params,
            "classes": self.classes_.tolist(),
            "coef": self.coef_.tolist(),
            "coef_var": self.coef_var_.tolist(),
            "support_prob": None if self.support_prob_ is None else self.support_prob_.tolist(),
            "theta": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.theta_.items()},
        }

    @classmethod
    def from_dict(cls, d):
        est = cls(**d["params"])
        theta = d["theta"]
        out, _ = est._channels()
        out = out.with_params(**{k: v for k, v in theta.items() if k in out.params()})
        est.classes_ = np.asarray(d["classes"])
        est._set_fitted(d["coef"], d["coef_var"], d["support_prob"], theta, out)
        return est

    def save(self, path):
        """Write the fitted model as JSON (floats round-trip exactly)."""
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class OneBitCSClassifier(ClassifierMixin, BaseEstimator):
    """Keep the K largest-magnitude correlations of X'y as the weight vector."""

    def __init__(self, K=10):
        self.K = K

    def fit(self, X, y):
        X, y = check_X_y(X, y, accept_sparse="csr", dtype=np.float64)
        self.classes_, ypm = _binary_labels(y)
        self.coef_ = one_bit_cs(Dataset(X, ypm), int(self.K))
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, accept_sparse="csr", dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return np.asarray(X @ self.coef_).ravel()

    def predict(self, X):
        return self.classes_[(self.decision_function(X) >= 0).astype(int)]

    @property
    def n_selected_(self):
        check_is_fitted(self, "coef_")
        return int(np.count_nonzero(self.coef_))
