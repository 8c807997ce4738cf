"""Frozen classification functions from k-means or a spherical GMM.

Both methods standardise the training columns (mean 0, sd 1 with ddof=1)
and store those parameters, so the fitted model is a fixed map from any
raw M-vector to a cluster label in ``1..C``. Cluster labels are put in a
canonical order by sorting the standardized means lexicographically.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateModelError, FailedClassification

N_INIT = 10
MAX_LLOYD = 300
EXTRA_ROUNDS = 5
GMM_TOL = 1e-8
GMM_MAX_ITER = 500
SIGMA2_FLOOR = 1e-10


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ClusterModel:
    method: str
    C: int
    standardize_mean: np.ndarray
    standardize_sd: np.ndarray
    means: np.ndarray                 # (C, M), standardized scale
    weights: np.ndarray | None = None
    sigma2: float | None = None
    provenance: str = ""
    diagnostics: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        for name in ("standardize_mean", "standardize_sd", "means"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        if self.weights is not None:
            object.__setattr__(self, "weights", _readonly(self.weights))
        if np.any(self.standardize_sd <= 0):
            raise ValueError("standardization sd must be positive")
        if self.method == "gmm":
            if abs(self.weights.sum() - 1.0) > 1e-10:
                raise ValueError("mixture weights must sum to 1")
            if not self.sigma2 > 0:
                raise ValueError("mixture variance must be positive")

    @property
    def n_features(self):
        return self.means.shape[1]

    def standardize(self, Y):
        return (np.asarray(Y, dtype=float) - self.standardize_mean) / self.standardize_sd

    def raw_means(self):
        return self.means * self.standardize_sd + self.standardize_mean

    def fingerprint(self):
        """Hash of every parameter that affects classification."""
        h = hashlib.sha256()
        h.update(f"{self.method}|{self.C}|{self.sigma2!r}".encode())
        for a in (self.standardize_mean, self.standardize_sd, self.means, self.weights):
            if a is not None:
                h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def to_dict(self):
        return {
            "method": self.method,
            "C": self.C,
            "standardize_mean": self.standardize_mean.tolist(),
            "standardize_sd": self.standardize_sd.tolist(),
            "means": self.means.tolist(),
            "weights": None if self.weights is None else self.weights.tolist(),
            "sigma2": self.sigma2,
            "provenance": self.provenance,
        }


def classify_many(model, Y, raw_scale=True):
    """Labels (1..C) for each row of ``Y``; ties go to the lowest index."""
    Y = np.asarray(Y, dtype=float)
    Z = model.standardize(Y) if raw_scale else Y
    d2 = _sqdist(Z, model.means)
    if model.method == "gmm":
        score = np.log(model.weights) - d2 / (2.0 * model.sigma2)
        return np.argmax(score, axis=-1) + 1
    return np.argmin(d2, axis=-1) + 1


def classify(model, y, raw_scale=True):
    """Cluster index in ``1..C`` for a single M-vector."""
    y = np.asarray(y, dtype=float).reshape(1, -1)
    return int(classify_many(model, y, raw_scale)[0])


def fixed_cutoff_model(cutoff=0.0):
    """Two-class rule ``K(y) = 1 if y <= cutoff else 2`` for scalar exposures.

    Expressed as nearest-mean with means at cutoff -/+ 1, so it plugs into
    every pipeline like a fitted k-means model.
    """
    return ClusterModel(
        method="kmeans", C=2,
        standardize_mean=[float(cutoff)], standardize_sd=[1.0],
        means=[[-1.0], [1.0]], provenance="fixed-cutoff",
    )


def _sqdist(Z, means):
    # |z|^2 - 2 z.m + |m|^2 is faster but loses the exact tie structure
    diff = Z[..., None, :] - means
    return np.einsum("...ck,...ck->...c", diff, diff)


def standardize_columns(data):
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    mean = data.mean(axis=0)
    sd = data.std(axis=0, ddof=1) if data.shape[0] > 1 else np.zeros(data.shape[1])
    if np.any(~(sd > 0)):
        raise ValueError("cannot standardize a constant column")
    return (data - mean) / sd, mean, sd


def _canonical_order(means):
    # lexicographic: first column is the primary key
    return np.lexsort(means.T[::-1])


def _kmeanspp(Z, C, rng):
    I = Z.shape[0]
    centers = [Z[rng.integers(I)]]
    d2 = np.sum((Z - centers[0]) ** 2, axis=1)
    for _ in range(1, C):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(I)
        else:
            idx = rng.choice(I, p=d2 / total)
        centers.append(Z[idx])
        d2 = np.minimum(d2, np.sum((Z - Z[idx]) ** 2, axis=1))
    return np.array(centers)


def lloyd(Z, centers, max_iter=MAX_LLOYD):
    """Lloyd iterations. Returns (centers, labels0, wcss, trace).

    Empty clusters keep their previous center, which keeps WCSS
    non-increasing.
    """
    centers = centers.copy()
    trace = []
    labels = None
    for _ in range(max_iter):
        d2 = _sqdist(Z, centers)
        new = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(Z.shape[0]), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(centers.shape[0]):
            members = labels == c
            if members.any():
                centers[c] = Z[members].mean(axis=0)
    d2 = _sqdist(Z, centers)
    labels = np.argmin(d2, axis=1)
    wcss = float(d2[np.arange(Z.shape[0]), labels].sum())
    trace.append(wcss)
    return centers, labels, wcss, trace


def _kmeans_standardized(Z, C, rng, n_init):
    best = None
    for _ in range(EXTRA_ROUNDS + 1):
        for _ in range(n_init):
            centers, labels, wcss, trace = lloyd(Z, _kmeanspp(Z, C, rng))
            if np.bincount(labels, minlength=C).min() == 0:
                continue
            if best is None or wcss < best[2]:
                best = (centers, labels, wcss, trace)
        if best is not None:
            return best
    raise FailedClassification(f"k-means left an empty cluster in every restart (C={C})")


def fit_kmeans(data, C, rng_seed=None, n_init=N_INIT, provenance=""):
    """k-means++ initialised Lloyd with restarts on standardized data."""
    Z, mean, sd = standardize_columns(data)
    if Z.shape[0] < C:
        raise ValueError(f"need at least C={C} rows, got {Z.shape[0]}")
    rng = np.random.default_rng(rng_seed)
    centers, labels, wcss, trace = _kmeans_standardized(Z, C, rng, n_init)
    order = _canonical_order(centers)
    return ClusterModel(
        method="kmeans", C=C, standardize_mean=mean, standardize_sd=sd,
        means=centers[order], provenance=provenance,
        diagnostics={"wcss": wcss, "wcss_trace": trace},
    )


def _gmm_loglik_resp(Z, means, weights, sigma2):
    M = Z.shape[1]
    d2 = _sqdist(Z, means)
    logp = np.log(weights) - 0.5 * d2 / sigma2 - 0.5 * M * np.log(2.0 * np.pi * sigma2)
    mx = logp.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(logp - mx).sum(axis=1))
    resp = np.exp(logp - lse[:, None])
    return float(lse.sum()), resp, d2


def em_spherical(Z, means, weights, sigma2, tol=GMM_TOL, max_iter=GMM_MAX_ITER):
    """EM for a mixture with one common spherical variance.

    Returns (means, weights, sigma2, loglik_trace).
    """
    I, M = Z.shape
    ll, resp, d2 = _gmm_loglik_resp(Z, means, weights, sigma2)
    trace = [ll]
    for _ in range(max_iter):
        nk = resp.sum(axis=0)
        if np.any(nk <= 1e-12):
            raise FailedClassification("mixture component lost all responsibility")
        weights = nk / I
        means = (resp.T @ Z) / nk[:, None]
        d2 = _sqdist(Z, means)
        sigma2 = float(np.sum(resp * d2) / (I * M))
        if sigma2 < SIGMA2_FLOOR:
            raise DegenerateModelError("mixture variance collapsed")
        ll_new, resp, d2 = _gmm_loglik_resp(Z, means, weights, sigma2)
        trace.append(ll_new)
        if abs(ll_new - ll) <= tol * abs(ll):
            break
        ll = ll_new
    return means, weights, sigma2, trace


def fit_gmm(data, C, rng_seed=None, n_init=N_INIT, provenance=""):
    """Spherical common-variance Gaussian mixture, initialised from k-means."""
    Z, mean, sd = standardize_columns(data)
    I, M = Z.shape
    if I < C:
        raise ValueError(f"need at least C={C} rows, got {I}")
    if C == 1:
        means = np.zeros((1, M))
        sigma2 = float(np.sum(Z * Z) / (I * M))
        return ClusterModel(
            method="gmm", C=1, standardize_mean=mean, standardize_sd=sd,
            means=means, weights=[1.0], sigma2=sigma2, provenance=provenance,
            diagnostics={"loglik_trace": []},
        )
    rng = np.random.default_rng(rng_seed)
    centers, labels, wcss, _ = _kmeans_standardized(Z, C, rng, n_init)
    weights = np.bincount(labels, minlength=C) / I
    sigma2 = max(wcss / (I * M), SIGMA2_FLOOR)
    means, weights, sigma2, trace = em_spherical(Z, centers, weights, sigma2)
    order = _canonical_order(means)
    weights = weights[order] / weights.sum()
    model = ClusterModel(
        method="gmm", C=C, standardize_mean=mean, standardize_sd=sd,
        means=means[order], weights=weights, sigma2=sigma2, provenance=provenance,
        diagnostics={"loglik_trace": trace},
    )
    hard = classify_many(model, Z, raw_scale=False)
    if np.bincount(hard, minlength=C + 1)[1:].min() == 0:
        raise FailedClassification("GMM classification leaves a cluster empty")
    return model


def fit_cluster(method, data, C, rng_seed=None, provenance=""):
    if method == "kmeans":
        return fit_kmeans(data, C, rng_seed, provenance=provenance)
    if method == "gmm":
        return fit_gmm(data, C, rng_seed, provenance=provenance)
    raise ValueError(f"unknown cluster method {method!r}")
