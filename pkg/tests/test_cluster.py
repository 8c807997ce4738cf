from __future__ import annotations

from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mecluster.cluster import (
    ClusterModel,
    classify,
    classify_many,
    em_spherical,
    fit_gmm,
    fit_kmeans,
    fixed_cutoff_model,
    lloyd,
    standardize_columns,
)
from mecluster.errors import FailedClassification


def partition(labels):
    groups = {}
    for i, l in enumerate(labels):
        groups.setdefault(int(l), []).append(i)
    return sorted(tuple(g) for g in groups.values())


def separated(rng, n=20, sep=10.0):
    a = rng.normal(0.0, 1.0, (n, 2))
    b = rng.normal(0.0, 1.0, (n, 2)) + [sep, 0.0]
    return np.vstack([a, b])


def test_two_pairs_1d():
    data = np.array([[0.0], [1.0], [10.0], [11.0]])
    model = fit_kmeans(data, 2, rng_seed=0)
    labels = classify_many(model, data)
    assert partition(labels) == [(0, 1), (2, 3)]
    assert model.means[0, 0] == pytest.approx(-model.means[1, 0])


def test_as_many_points_as_clusters():
    data = np.array([[0.0, 1.0], [3.0, -1.0], [5.0, 2.0], [-2.0, 0.0]])
    model = fit_kmeans(data, 4, rng_seed=1)
    assert model.diagnostics["wcss"] == pytest.approx(0.0, abs=1e-20)
    assert sorted(classify_many(model, data).tolist()) == [1, 2, 3, 4]


def test_matches_exhaustive_two_partition(rng):
    data = separated(rng)
    sub = data[rng.choice(40, 12, replace=False)]
    Z, _, _ = standardize_columns(sub)
    best, best_val = None, np.inf
    for bits in product([0, 1], repeat=11):
        lab = np.array((0,) + bits)
        if lab.min() == lab.max():
            continue
        w = sum(np.sum((Z[lab == c] - Z[lab == c].mean(axis=0)) ** 2) for c in (0, 1))
        if w < best_val:
            best, best_val = lab, w
    model = fit_kmeans(sub, 2, rng_seed=3)
    assert partition(classify_many(model, sub)) == partition(best)
    assert model.diagnostics["wcss"] == pytest.approx(best_val, rel=1e-10)


def test_lloyd_wcss_never_increases(rng):
    Z = rng.normal(size=(300, 3))
    for seed in range(5):
        start = Z[np.random.default_rng(seed).choice(300, 4, replace=False)]
        _, _, _, trace = lloyd(Z, start)
        assert np.all(np.diff(trace) <= 1e-9 * trace[0])


@given(arrays(np.float64, (25, 2), elements=st.floats(-100, 100)), st.integers(2, 4), st.integers(0, 2**16))
def test_lloyd_wcss_monotone_property(data, C, seed):
    if np.any(np.std(data, axis=0) < 1e-6):
        return
    Z, _, _ = standardize_columns(data)
    start = Z[np.random.default_rng(seed).choice(25, C, replace=False)]
    _, _, _, trace = lloyd(Z, start)
    assert np.all(np.diff(trace) <= 1e-9 * max(trace[0], 1.0))


def test_em_loglik_never_decreases(rng):
    Z, _, _ = standardize_columns(np.vstack([rng.normal(size=(200, 2)), rng.normal(size=(100, 2)) + 2.5]))
    means = Z[rng.choice(300, 3, replace=False)]
    _, _, _, trace = em_spherical(Z, means, np.full(3, 1 / 3), 1.0)
    assert len(trace) > 2
    assert np.all(np.diff(trace) >= -1e-9 * abs(trace[0]))


def test_gmm_trace_monotone_from_fit(rng):
    data = np.vstack([rng.normal(size=(150, 3)), rng.normal(size=(150, 3)) + 3.0])
    model = fit_gmm(data, 2, rng_seed=7)
    trace = model.diagnostics["loglik_trace"]
    assert np.all(np.diff(trace) >= -1e-9 * abs(trace[0]))


def test_gmm_equals_kmeans_on_separated_data(rng):
    data = separated(rng)
    k = fit_kmeans(data, 2, rng_seed=4)
    g = fit_gmm(data, 2, rng_seed=4)
    assert np.array_equal(classify_many(k, data), classify_many(g, data))


def test_gmm_single_component(rng):
    data = rng.normal(size=(50, 3))
    model = fit_gmm(data, 1)
    Z, _, _ = standardize_columns(data)
    assert np.array_equal(model.means, np.zeros((1, 3)))
    assert model.weights.tolist() == [1.0]
    assert model.sigma2 == pytest.approx(np.sum(Z * Z) / (50 * 3))


def test_gmm_model_invariants(rng):
    model = fit_gmm(rng.normal(size=(200, 2)), 3, rng_seed=2)
    assert abs(model.weights.sum() - 1.0) <= 1e-10
    assert model.sigma2 > 0 and np.all(model.standardize_sd > 0)


def test_classify_stored_mean_returns_that_cluster(rng):
    model = fit_kmeans(rng.normal(size=(100, 2)), 3, rng_seed=0)
    for c, mean in enumerate(model.raw_means(), start=1):
        assert classify(model, mean) == c


def test_kmeans_tie_goes_to_lowest_index():
    model = ClusterModel(method="kmeans", C=2, standardize_mean=[0.0], standardize_sd=[1.0],
                         means=[[-1.0], [1.0]])
    assert classify(model, [0.0]) == 1


def test_equal_weight_gmm_is_nearest_mean(rng):
    means = rng.normal(size=(4, 3))
    kw = dict(C=4, standardize_mean=np.zeros(3), standardize_sd=np.ones(3), means=means)
    g = ClusterModel(method="gmm", weights=np.full(4, 0.25), sigma2=0.7, **kw)
    k = ClusterModel(method="kmeans", **kw)
    Y = rng.normal(size=(500, 3))
    assert np.array_equal(classify_many(g, Y), classify_many(k, Y))


@pytest.mark.parametrize("method", ["kmeans", "gmm"])
def test_training_rows_classified_as_fitted(rng, method):
    data = rng.lognormal(size=(300, 3))
    fit = fit_kmeans if method == "kmeans" else fit_gmm
    model = fit(data, 3, rng_seed=9)
    Z = model.standardize(data)
    assert np.array_equal(classify_many(model, data), classify_many(model, Z, raw_scale=False))
    if method == "kmeans":
        # the stored means are the centroids of the training assignment
        labels = classify_many(model, data)
        for c in range(1, 4):
            assert np.allclose(Z[labels == c].mean(axis=0), model.means[c - 1])


@pytest.mark.parametrize("method", ["kmeans", "gmm"])
def test_fit_is_deterministic_and_canonical(rng, method):
    data = rng.normal(size=(200, 2))
    fit = fit_kmeans if method == "kmeans" else fit_gmm
    a, b = fit(data, 3, rng_seed=5), fit(data, 3, rng_seed=5)
    assert a.fingerprint() == b.fingerprint()
    order = np.lexsort(a.means.T[::-1])
    assert order.tolist() == [0, 1, 2]


def test_model_is_frozen(rng):
    model = fit_kmeans(rng.normal(size=(50, 2)), 2, rng_seed=0)
    with pytest.raises(ValueError):
        model.means[0, 0] = 1.0


def test_constant_column_rejected():
    with pytest.raises(ValueError):
        fit_kmeans(np.column_stack([np.arange(10.0), np.ones(10)]), 2)


def test_more_clusters_than_rows_rejected():
    with pytest.raises(ValueError):
        fit_kmeans(np.arange(3.0)[:, None], 4)


def test_gmm_never_returns_an_empty_map_cluster(rng):
    # far more clusters than structure: either every MAP cluster is occupied or the fit fails
    data = np.vstack([rng.normal(size=(200, 1)), [[0.0]]])
    try:
        model = fit_gmm(data, 6, rng_seed=1)
    except FailedClassification:
        return
    labels = classify_many(model, data)
    assert np.bincount(labels, minlength=7)[1:].min() > 0


def test_fixed_cutoff_model():
    K = fixed_cutoff_model(0.0)
    assert classify_many(K, np.array([[-0.1], [0.0], [0.1]])).tolist() == [1, 1, 2]
