from __future__ import annotations

import numpy as np
import pytest

from mecluster.mixed_model import ComponentFit, ErrorModelFit, ExposurePanel, blup_all, fit_error_model
from mecluster.nci import estimate_usual, taylor_backtransform
from mecluster.simulation import ScenarioConfig, generate_dataset


def test_lambda_one_is_linear_blup_plus_one():
    mu = np.array([-0.5, 0.0, 3.2])
    values, clamped = taylor_backtransform(mu, 1.0, 0.7)
    assert np.array_equal(values, mu + 1.0)
    assert not clamped.any()


def test_zero_noise_is_plain_inverse():
    mu = np.array([0.5, 2.0])
    values, _ = taylor_backtransform(mu, 0.5, 0.0)
    assert np.allclose(values, (0.5 * mu + 1.0) ** 2)


def test_taylor_value_against_gauss_hermite_quadrature():
    lam, mu, s2 = 0.5, 2.0, 0.4
    x, w = np.polynomial.hermite_e.hermegauss(64)
    eps = np.sqrt(s2) * x
    expected = np.sum(w * (lam * (mu + eps) + 1.0) ** (1.0 / lam)) / np.sqrt(2.0 * np.pi)
    value, _ = taylor_backtransform(np.array([mu]), lam, s2)
    assert abs(value[0] - expected) / expected < 0.01


def test_boundary_individuals_are_clamped_and_flagged():
    values, clamped = taylor_backtransform(np.array([-5.0, 1.0]), 0.5, 0.1)
    assert clamped.tolist() == [True, False]
    assert np.all(np.isfinite(values)) and np.all(values > 0)


def test_clamped_counts_reported():
    fit = ErrorModelFit(components=(ComponentFit(lam=0.5, beta0=-10.0, beta=np.zeros(0), sigma2_u=0.0,
                                                  sigma2_eps=1.0, loglik=0.0),))
    panel = ExposurePanel(T=[1, 1], reports=[0.5, 2.0])
    est = estimate_usual(fit, panel)
    assert est.n_clamped.tolist() == [2]
    assert np.all(est.values > 0)


def test_monotone_in_individual_mean():
    fit = ErrorModelFit(components=(ComponentFit(lam=0.4, beta0=2.0, beta=np.zeros(0), sigma2_u=1.0,
                                                  sigma2_eps=0.5, loglik=0.0),))
    reports = np.linspace(0.5, 20.0, 30)
    panel = ExposurePanel(T=np.full(30, 1), reports=reports)
    est = estimate_usual(fit, panel).values[:, 0]
    assert np.all(np.diff(est) > 0)


@pytest.fixture(scope="module")
def simulated():
    data = generate_dataset(ScenarioConfig(I=800, M=5, seed=5), 0)
    return data, fit_error_model(data.panel)


def test_nci_variance_reduction_end_to_end(simulated):
    data, fit = simulated
    nci = estimate_usual(fit, data.panel).values
    naive = data.panel.individual_means()
    for m in range(5):
        assert np.var(nci[:, m] - data.truth[:, m]) < np.var(naive[:, m] - data.truth[:, m])


def test_estimates_positive_and_finite(simulated):
    data, fit = simulated
    est = estimate_usual(fit, data.panel)
    assert np.all(np.isfinite(est.values)) and np.all(est.values > 0)
    assert np.asarray(est).shape == (800, 5)


def test_uses_standard_blup(simulated):
    data, fit = simulated
    est = estimate_usual(fit, data.panel).values[:, 0]
    mu = blup_all(fit[0], data.panel, 0)
    assert np.allclose(est, taylor_backtransform(mu, fit[0].lam, fit[0].sigma2_eps)[0])
