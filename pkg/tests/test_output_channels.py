import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

import oracles
from gampclass.channels import (
    HingeChannel,
    LogisticChannel,
    ProbitChannel,
    RobustChannel,
    hinge_spg,
    logistic_spg,
    msg_prox,
    predict_proba,
    probit_spg,
    robust_spg,
)

finite = st.floats(-8, 8, allow_nan=False)
pos = st.floats(1e-3, 20, allow_nan=False)
labels = st.sampled_from([-1.0, 1.0])


def test_probit_matches_quadrature_example():
    m = probit_spg(1.0, 0.5, 2.0, 1.0)
    _, mean, var = oracles.tilted_moments(oracles.probit_loglik(1.0, 1.0), 0.5, 2.0)
    assert abs(m.z_hat - mean) < 1e-8
    assert abs(m.tau_z - var) < 1e-8


def test_probit_flat_channel_returns_prior():
    m = probit_spg(1.0, 0.7, 0.3, 1e12)
    assert m.z_hat == pytest.approx(0.7, abs=1e-6)
    assert m.tau_z == pytest.approx(0.3, rel=1e-6)


def test_probit_deep_tail_is_finite():
    m = probit_spg(1.0, -60.0, 1.0, 1.0)
    assert np.isfinite(m.z_hat) and np.isfinite(m.tau_z) and m.tau_z > 0
    assert np.isfinite(m.log_scale)


def test_hinge_flat_region():
    m = hinge_spg(1.0, 5.0, 1e-6)
    assert m.z_hat == pytest.approx(5.0, abs=1e-9)
    assert m.tau_z == pytest.approx(1e-6, rel=1e-6)


def test_hinge_matches_quadrature_example():
    m = hinge_spg(1.0, 0.0, 1.0)
    c, mean, var = oracles.tilted_moments(oracles.hinge_loglik(1.0), 0.0, 1.0, breaks=(1.0,))
    assert abs(m.z_hat - mean) < 1e-8
    assert abs(m.tau_z - var) < 1e-8
    assert abs(math.exp(m.log_scale) - c) < 1e-8


def test_robust_gamma_zero_is_inner():
    inner = ProbitChannel(1.0)
    a = robust_spg(1.0, 0.3, 0.5, 0.0, inner)
    b = probit_spg(1.0, 0.3, 0.5, 1.0)
    assert a.z_hat == b.z_hat and a.tau_z == b.tau_z


def test_robust_gamma_half_is_uninformative():
    m = robust_spg(1.0, 0.3, 0.5, 0.5 - 1e-12, ProbitChannel(1.0))
    assert m.z_hat == pytest.approx(0.3, abs=1e-9)
    assert m.tau_z == pytest.approx(0.5, abs=1e-9)


def test_robust_matches_quadrature_example():
    m = robust_spg(1.0, 0.3, 0.5, 0.2, ProbitChannel(1.0))
    ll = oracles.robust_loglik(oracles.probit_loglik(1.0, 1.0), 0.2)
    _, mean, var = oracles.tilted_moments(ll, 0.3, 0.5)
    assert abs(m.z_hat - mean) < 1e-8
    assert abs(m.tau_z - var) < 1e-8


def test_logistic_initialization_and_fixed_point():
    m = logistic_spg(np.array([1.0]), np.array([0.4]), np.array([2.0]), 1.5)
    xi = float(m.xi[0])
    lam = 1.5 / (2 * xi) * (special.expit(1.5 * xi) - 0.5)
    tau = 2.0 / (1 + 2 * 2.0 * lam)
    zh = tau * (0.4 / 2.0 + 1.5 / 2)
    assert abs(tau - m.tau_z[0]) < 1e-8
    assert abs(zh - m.z_hat[0]) < 1e-8
    assert abs(math.sqrt(tau + zh ** 2) - xi) < 1e-8


def test_logistic_small_xi_limit():
    # lambda(xi) -> alpha^2 / 8 as xi -> 0; reached through p_hat = 0, tau_p tiny
    m = logistic_spg(1.0, 0.0, 1e-16, 2.0, max_iter=1)
    assert np.isfinite(m.z_hat) and np.isfinite(m.tau_z)


@settings(max_examples=60, deadline=None)
@given(labels, finite, pos, st.floats(0.1, 10))
def test_logistic_label_attraction(y, p, tau, alpha):
    m = logistic_spg(y, p, tau, alpha)
    assert y * m.z_hat >= y * p * m.tau_z / tau - 1e-12


@settings(max_examples=80, deadline=None)
@given(labels, finite, pos, st.sampled_from(["probit", "logistic", "hinge"]))
def test_log_concave_variance_shrinks(y, p, tau, kind):
    ch = {"probit": ProbitChannel(0.5), "logistic": LogisticChannel(2.0), "hinge": HingeChannel()}[kind]
    m = ch.spg(y, p, tau)
    assert 0 < m.tau_z <= tau * (1 + 1e-12)


@settings(max_examples=80, deadline=None)
@given(labels, finite, pos, st.sampled_from(["probit", "logistic", "hinge", "robust"]))
def test_sign_antisymmetry(y, p, tau, kind):
    ch = {"probit": ProbitChannel(0.5), "logistic": LogisticChannel(2.0), "hinge": HingeChannel(),
          "robust": RobustChannel(ProbitChannel(1.0), 0.1)}[kind]
    a = ch.spg(y, p, tau)
    b = ch.spg(-y, -p, tau)
    assert a.z_hat == pytest.approx(-b.z_hat, abs=1e-10)
    assert a.tau_z == pytest.approx(b.tau_z, abs=1e-10)


# -- max-sum prox -------------------------------------------------------------


@pytest.mark.parametrize("p,tau,expected", [(-0.5, 1.0, 0.5), (2.0, 1.0, 2.0), (0.5, 1.0, 1.0)])
def test_hinge_prox_closed_form(p, tau, expected):
    m = msg_prox(HingeChannel(), 1.0, p, tau)
    assert m.z_hat == pytest.approx(expected, abs=1e-12)
    assert m.tau_z == pytest.approx(tau)


def test_probit_prox_flat_region():
    m = msg_prox(ProbitChannel(1.0), 1.0, 10.0, 1.0)
    assert m.z_hat == pytest.approx(10.0, abs=1e-12)


def test_logistic_prox_matches_golden_oracle():
    f = lambda u: np.logaddexp(0.0, -u)
    m = msg_prox(LogisticChannel(1.0), 1.0, 0.0, 1.0)
    assert abs(m.z_hat - oracles.golden_prox(f, 0.0, 1.0)) < 1e-6


@settings(max_examples=80, deadline=None)
@given(labels, finite, pos, st.sampled_from(["probit", "logistic"]))
def test_prox_stationarity(y, p, tau, kind):
    ch = ProbitChannel(0.7) if kind == "probit" else LogisticChannel(1.3)
    m = msg_prox(ch, y, p, tau)
    g, curv = ch.loss_derivs(np.asarray(y), np.asarray(m.z_hat))
    assert abs(float(g) + (float(m.z_hat) - p) / tau) < 1e-8
    assert m.tau_z == pytest.approx(tau / (1 + tau * float(curv)), rel=1e-10)


# -- predictive probabilities -------------------------------------------------


def test_predict_point_mass():
    ch = LogisticChannel(2.0)
    assert predict_proba(ch, 0.7, 0.0) == pytest.approx(special.expit(1.4), abs=1e-12)


def test_predict_probit_symmetry():
    assert predict_proba(ProbitChannel(1.0), 0.0, 3.0) == pytest.approx(0.5)


def test_predict_logistic_quadrature():
    val = integrate.quad(lambda z: special.expit(2 * z) * math.exp(-(z - 1) ** 2 / 1.0) / math.sqrt(math.pi),
                         -30, 30, epsabs=1e-13)[0]
    assert abs(predict_proba(LogisticChannel(2.0), 1.0, 0.5) - val) < 1e-6
