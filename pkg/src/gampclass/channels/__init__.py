"""Scalar nonlinearities plugged into the GAMP iteration."""
from .output import (
    HingeChannel,
    LogisticChannel,
    OutputChannel,
    ProbitChannel,
    RobustChannel,
    ScalarMoments,
    hinge_spg,
    logistic_spg,
    msg_prox,
    predict_proba,
    probit_spg,
    robust_spg,
)
from .prior import (
    ConfigurationError,
    ElasticNetPrior,
    GaussianMixturePrior,
    GaussianPrior,
    InputChannel,
    PriorMoments,
    SpikeSlabPrior,
    elastic_net_msg,
    elastic_net_spg,
    gaussian_mixture_spg,
    gaussian_spg,
    laplacian_prior,
    spike_slab_spg,
)

__all__ = [
    "ConfigurationError",
    "ElasticNetPrior",
    "GaussianMixturePrior",
    "GaussianPrior",
    "HingeChannel",
    "InputChannel",
    "LogisticChannel",
    "OutputChannel",
    "PriorMoments",
    "ProbitChannel",
    "RobustChannel",
    "ScalarMoments",
    "SpikeSlabPrior",
    "elastic_net_msg",
    "elastic_net_spg",
    "gaussian_mixture_spg",
    "gaussian_spg",
    "hinge_spg",
    "laplacian_prior",
    "logistic_spg",
    "msg_prox",
    "predict_proba",
    "probit_spg",
    "robust_spg",
    "spike_slab_spg",
]
