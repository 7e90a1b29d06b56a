import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from gampclass.channels import (
    ConfigurationError,
    ElasticNetPrior,
    GaussianMixturePrior,
    GaussianPrior,
    SpikeSlabPrior,
    elastic_net_msg,
    elastic_net_spg,
    gaussian_mixture_spg,
    gaussian_spg,
    spike_slab_spg,
)

r_vals = st.floats(-10, 10, allow_nan=False)
taus = st.floats(1e-3, 10, allow_nan=False)


def test_gaussian_conjugate():
    m = gaussian_spg(1.0, 1.0, 0.0, 1.0)
    assert (float(m.w_hat), float(m.tau_w)) == (0.5, 0.5)


def test_gaussian_limits():
    flat = gaussian_spg(1.3, 0.4, 0.0, 1e14)
    assert flat.w_hat == pytest.approx(1.3) and flat.tau_w == pytest.approx(0.4)
    point = gaussian_spg(1.3, 0.4, 2.0, 1e-14)
    assert point.w_hat == pytest.approx(2.0) and point.tau_w == pytest.approx(0.0, abs=1e-12)


def test_laplacian_matches_quadrature():
    m = elastic_net_spg(2.0, 1.0, 1.0, 0.0)
    _, mean, var = oracles.tilted_moments(lambda w: -abs(w), 2.0, 1.0, breaks=(0.0,))
    assert abs(m.w_hat - mean) < 1e-8
    assert abs(m.tau_w - var) < 1e-8


def test_elastic_net_centered():
    m = elastic_net_spg(0.0, 1.0, 1.0, 0.5)
    _, _, var = oracles.tilted_moments(lambda w: -abs(w) - 0.5 * w * w, 0.0, 1.0, breaks=(0.0,))
    assert abs(float(m.w_hat)) < 1e-14
    assert abs(m.tau_w - var) < 1e-8


def test_elastic_net_lambda1_zero_is_gaussian():
    a = elastic_net_spg(1.2, 0.7, 0.0, 0.5)
    b = gaussian_spg(1.2, 0.7, 0.0, 1.0)
    assert a.w_hat == pytest.approx(b.w_hat) and a.tau_w == pytest.approx(b.tau_w)


def test_elastic_net_large_argument_stable():
    m = elastic_net_spg(80.0, 1.0, 1.0, 0.1)
    assert np.isfinite(m.w_hat) and np.isfinite(m.tau_w)


def test_elastic_net_prox_examples():
    m = elastic_net_msg(0.3, 1.0, 0.0, 0.0)
    assert (float(m.w_hat), float(m.tau_w)) == (0.3, 1.0)
    assert float(elastic_net_msg(0.4, 1.0, 0.5, 0.0).w_hat) == 0.0
    f = lambda u: 0.5 * np.abs(u) + 0.25 * u * u
    ref = oracles.golden_prox(f, 3.0, 2.0)
    assert abs(float(elastic_net_msg(3.0, 2.0, 0.5, 0.25).w_hat) - ref) < 1e-6


def test_mixture_reductions_and_oracle():
    a = gaussian_mixture_spg(0.8, 0.3, (1.0,), (0.5,), (2.0,))
    b = gaussian_spg(0.8, 0.3, 0.5, 2.0)
    assert a.w_hat == pytest.approx(b.w_hat) and a.tau_w == pytest.approx(b.tau_w)
    sym = gaussian_mixture_spg(0.0, 1.0, (0.5, 0.5), (-1.0, 1.0), (0.3, 0.3))
    assert abs(float(sym.w_hat)) < 1e-14
    om, mu, s2 = (0.3, 0.7), (-1.0, 2.0), (1.0, 0.25)

    def logp(w):
        return math.log(sum(o * math.exp(-(w - m) ** 2 / (2 * s)) / math.sqrt(2 * math.pi * s)
                            for o, m, s in zip(om, mu, s2)))

    _, mean, var = oracles.tilted_moments(logp, 1.0, 0.5)
    m = gaussian_mixture_spg(1.0, 0.5, om, mu, s2)
    assert abs(m.w_hat - mean) < 1e-8 and abs(m.tau_w - var) < 1e-8


def test_spike_slab_extremes_and_oracle():
    slab = GaussianPrior(0.0, 1.0)
    on = spike_slab_spg(1.0, 0.5, 1.0, slab)
    g = gaussian_spg(1.0, 0.5, 0.0, 1.0)
    assert on.w_hat == pytest.approx(g.w_hat) and float(on.nonzero_prob) == 1.0
    off = spike_slab_spg(1.0, 0.5, 0.0, slab)
    assert float(off.w_hat) == 0.0 and float(off.tau_w) == 0.0 and float(off.nonzero_prob) == 0.0
    lp = lambda w: -0.5 * w * w - 0.5 * math.log(2 * math.pi)
    _, mean, var, pp = oracles.prior_moments(lp, 2.0, 0.5, atom=0.9)
    m = spike_slab_spg(2.0, 0.5, 0.1, slab)
    assert abs(m.w_hat - mean) < 1e-8 and abs(m.tau_w - var) < 1e-8
    assert abs(m.nonzero_prob - pp) < 1e-8


def test_spike_slab_rejects_max_sum():
    with pytest.raises(ConfigurationError):
        SpikeSlabPrior(0.1, GaussianPrior()).msg(np.zeros(2), np.ones(2))


@settings(max_examples=80, deadline=None)
@given(r_vals, taus)
def test_soft_threshold_identity(r, tau):
    m = elastic_net_msg(r, tau, 0.7, 0.0)
    assert float(m.w_hat) == pytest.approx(math.copysign(max(abs(r) - 0.7 * tau, 0.0), r), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(r_vals, taus, st.sampled_from(["gaussian", "laplacian", "elastic_net"]))
def test_log_concave_variance_and_shrinkage(r, tau, kind):
    ch = {"gaussian": GaussianPrior(0.0, 2.0), "laplacian": ElasticNetPrior(1.0, 0.0),
          "elastic_net": ElasticNetPrior(0.5, 0.3)}[kind]
    m = ch.spg(r, tau)
    assert 0 <= m.tau_w <= tau * (1 + 1e-9)
    assert abs(m.w_hat) <= abs(r) + 1e-12


@settings(max_examples=60, deadline=None)
@given(r_vals, taus)
def test_spike_slab_shrinks_and_is_odd(r, tau):
    ch = SpikeSlabPrior(0.2, GaussianPrior(0.0, 1.0))
    a, b = ch.spg(r, tau), ch.spg(-r, tau)
    assert abs(a.w_hat) <= abs(r) + 1e-12
    assert a.tau_w >= 0 and 0 <= a.nonzero_prob <= 1
    assert a.w_hat == pytest.approx(-b.w_hat, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 8), st.floats(0, 8), taus)
def test_spike_slab_support_monotone(r1, r2, tau):
    lo, hi = sorted((r1, r2))
    ch = SpikeSlabPrior(0.05, GaussianPrior(0.0, 1.0))
    assert ch.spg(lo, tau).nonzero_prob <= ch.spg(hi, tau).nonzero_prob + 1e-12


def test_mixture_weights_validated():
    with pytest.raises(ValueError):
        GaussianMixturePrior((0.5, 0.6), (0.0, 1.0), (1.0, 1.0))
