from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mecluster.errors import FailedClassification, SeparationError, SingularDesignError
from mecluster.health_model import (
    ContrastSet,
    HealthFit,
    design_matrix,
    expand_contrasts,
    fit_health_batch,
    fit_health_occupied,
    fit_linear,
    fit_logistic,
    score_vector,
)


def test_outcome_equal_to_dummy():
    labels = np.array([1, 1, 2, 2, 3, 3])
    H = (labels == 2).astype(float)
    fit = fit_linear(H, labels)
    assert np.allclose(fit.contrasts, [1.0, 0.0], atol=1e-12)
    assert fit.intercept == pytest.approx(0.0, abs=1e-12)
    assert fit.sigma_e == pytest.approx(0.0, abs=1e-12)


def test_six_point_hand_example():
    fit = fit_linear([0, 0, 1, 1, 2, 2], [1, 1, 1, 1, 2, 2])
    assert fit.intercept == pytest.approx(0.5, abs=1e-12)
    assert fit.contrasts[0] == pytest.approx(1.5, abs=1e-12)


def test_orthogonal_covariate_leaves_contrasts_unchanged():
    labels = np.array([1, 1, 2, 2, 1, 1, 2, 2])
    H = np.array([0.3, 1.1, 2.0, 2.4, -0.2, 0.9, 1.7, 2.8])
    x = np.array([1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0])  # mean zero within each cluster
    a = fit_linear(H, labels)
    b = fit_linear(H, labels, x[:, None])
    assert np.allclose(a.contrasts, b.contrasts, atol=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_linear_residuals_orthogonal_to_design(seed):
    rng = np.random.default_rng(seed)
    n = 60
    labels = np.concatenate([[1, 2, 3], rng.integers(1, 4, n - 3)])
    X = rng.normal(size=(n, 2))
    H = rng.normal(size=n) * 3 + labels
    fit = fit_linear(H, labels, X)
    score = score_vector(fit, H, labels, X)
    assert np.max(np.abs(score)) <= 1e-8 * np.linalg.norm(H) * n


def test_singular_design():
    labels = np.array([1, 1, 2, 2])
    X = (labels == 2).astype(float)[:, None]
    with pytest.raises(SingularDesignError):
        fit_linear([1.0, 2.0, 3.0, 4.0], labels, X)


def test_empty_cluster_rejected():
    with pytest.raises(FailedClassification):
        fit_linear([1.0, 2.0, 3.0], [1, 1, 3], C=3)


def test_logistic_balanced_outcome_gives_zero_contrasts():
    labels = np.repeat([1, 2, 3], 10)
    H = np.tile([0, 1], 15).astype(float)
    fit = fit_logistic(H, labels)
    assert np.allclose(fit.contrasts, 0.0, atol=1e-8)


def test_logistic_two_by_two_log_odds():
    # cluster 1: 10 controls, 10 cases; cluster 2: 10 controls, 30 cases
    labels = np.repeat([1, 1, 2, 2], [10, 10, 10, 30])
    H = np.repeat([0, 1, 0, 1], [10, 10, 10, 30]).astype(float)
    fit = fit_logistic(H, labels)
    assert fit.contrasts[0] == pytest.approx(np.log(3.0), abs=1e-6)


def test_logistic_all_cases_in_one_cluster_is_separation():
    labels = np.repeat([1, 2], 10)
    H = np.concatenate([np.tile([0.0, 1.0], 5), np.ones(10)])
    with pytest.raises(SeparationError):
        fit_logistic(H, labels)


def test_logistic_score_at_convergence(rng):
    n = 400
    labels = rng.integers(1, 4, n)
    X = rng.normal(size=(n, 2))
    p = 1 / (1 + np.exp(-(-0.5 + 0.4 * (labels == 2) - 0.7 * (labels == 3) + X @ [0.3, -0.2])))
    H = (rng.random(n) < p).astype(float)
    fit = fit_logistic(H, labels, X)
    assert np.max(np.abs(score_vector(fit, H, labels, X))) <= 1e-6


def test_contrast_expansion_c3():
    fit = HealthFit(kind="linear", C=3, intercept=0.0, contrasts=np.array([0.4, -1.1]), covariate_coefs=np.zeros(0))
    cs = expand_contrasts(fit)
    assert cs.as_dict() == pytest.approx({(1, 2): 0.4, (1, 3): -1.1, (2, 3): -1.5})
    assert cs.get(2, 3) == pytest.approx(cs.get(1, 3) - cs.get(1, 2))
    assert cs.get(3, 2) == -cs.get(2, 3)


def test_contrast_expansion_c2_passthrough():
    fit = HealthFit(kind="linear", C=2, intercept=1.0, contrasts=np.array([0.7]), covariate_coefs=np.zeros(0))
    assert expand_contrasts(fit).values.tolist() == [0.7]


def test_c5_contrasts_match_refits_with_other_reference(rng):
    n = 300
    labels = np.concatenate([np.arange(1, 6), rng.integers(1, 6, n - 5)])
    X = rng.normal(size=(n, 1))
    H = rng.normal(size=n) + 0.5 * labels
    cs = expand_contrasts(fit_linear(H, labels, X))
    assert cs.values.size == 10
    for ref in range(1, 6):
        # relabel so that ``ref`` becomes cluster 1 and refit
        order = [ref] + [c for c in range(1, 6) if c != ref]
        relabel = np.empty(6, dtype=int)
        relabel[order] = np.arange(1, 6)
        refit = fit_linear(H, relabel[labels], X)
        for k, c in enumerate(order[1:]):
            assert cs.get(ref, c) == pytest.approx(refit.contrasts[k], abs=1e-10)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=5))
def test_contrast_identity_and_antisymmetry(values):
    C = len(values) + 1
    cs = expand_contrasts(HealthFit(kind="linear", C=C, intercept=0.0, contrasts=np.array(values),
                                    covariate_coefs=np.zeros(0)))
    for c in range(2, C + 1):
        for c2 in range(c + 1, C + 1):
            assert cs.get(c, c2) == pytest.approx(cs.get(1, c2) - cs.get(1, c), abs=1e-12)
            assert cs.get(c2, c) == -cs.get(c, c2)


@pytest.mark.parametrize("kind", ["linear", "logistic"])
def test_batch_matches_single_fits(rng, kind):
    n, L = 250, 6
    X = rng.normal(size=(n, 2))
    labels = rng.integers(1, 4, (L, n))
    if kind == "linear":
        H = rng.normal(size=n)
    else:
        H = (rng.random(n) < 0.3).astype(float)
    coef, ok, var = fit_health_batch(kind, H, labels, X, C=3, return_var=True)
    fit = fit_linear if kind == "linear" else fit_logistic
    for l in range(L):
        assert ok[l]
        assert np.allclose(coef[l], fit(H, labels[l], X, C=3).coef, atol=1e-8)
    assert np.all(var[ok] > 0)


def test_batch_linear_variance_is_ols_covariance(rng):
    n = 100
    labels = rng.integers(1, 3, (1, n))
    H = rng.normal(size=n)
    coef, ok, var = fit_health_batch("linear", H, labels, C=2, return_var=True)
    A = design_matrix(labels[0], 2)
    resid = H - A @ coef[0]
    cov = resid @ resid / (n - 2) * np.linalg.inv(A.T @ A)
    assert np.allclose(var[0], np.diag(cov))


def test_batch_flags_failed_replicates(rng):
    n = 30
    labels = np.vstack([rng.integers(1, 4, n), np.ones(n, dtype=int)])
    labels[0, :3] = [1, 2, 3]
    coef, ok = fit_health_batch("linear", rng.normal(size=n), labels, C=3)
    assert ok.tolist() == [True, False]
    assert np.all(np.isnan(coef[1]))


def test_occupied_fit_marks_unestimable_contrasts(rng):
    n = 60
    labels = rng.choice([1, 3], n)
    H = rng.normal(size=n) + labels
    cs = fit_health_occupied("linear", H, labels, C=3)
    assert np.isnan(cs.get(1, 2)) and np.isnan(cs.get(2, 3))
    assert cs.get(1, 3) == pytest.approx(fit_linear(H, (labels == 3) + 1).contrasts[0])
    with pytest.raises(FailedClassification):
        fit_health_occupied("linear", H, np.full(n, 2), C=3)


def test_contrast_set_pairs():
    cs = ContrastSet(C=4, values=np.arange(6.0))
    assert cs.pairs == [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)]
    assert cs.get(2, 2) == 0.0
