"""Linear and logistic health models on dummy-coded cluster membership.

Design matrix is ``[1 | 1{K=2} .. 1{K=C} | X]``; cluster 1 is the
reference, so the contrast vector holds ``alpha_{K12} .. alpha_{K1C}``.

The ``*_batch`` functions fit many replicates that share outcome and
covariates but differ in memberships (SIMEX and MI inner loops).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ConvergenceError, FailedClassification, SeparationError, SingularDesignError

LOGIT_TOL = 1e-10
LOGIT_MAX_ITER = 100
PROB_EDGE = 1e-8


@dataclass(frozen=True)
class HealthFit:
    kind: str                    # "linear" | "logistic"
    C: int
    intercept: float
    contrasts: np.ndarray        # (C-1,)
    covariate_coefs: np.ndarray  # (p,)
    sigma_e: float | None = None

    @property
    def coef(self):
        return np.concatenate([[self.intercept], self.contrasts, self.covariate_coefs])

    @classmethod
    def from_coef(cls, kind, C, coef, sigma_e=None):
        coef = np.asarray(coef, dtype=float)
        return cls(kind=kind, C=C, intercept=float(coef[0]), contrasts=coef[1:C].copy(),
                   covariate_coefs=coef[C:].copy(), sigma_e=sigma_e)


@dataclass(frozen=True)
class ContrastSet:
    """All pairwise contrasts ``alpha_{Kcc'}`` (effect of c' relative to c), c < c'."""

    C: int
    values: np.ndarray

    @property
    def pairs(self):
        return list(combinations(range(1, self.C + 1), 2))

    def get(self, c, c2):
        if c == c2:
            return 0.0
        if c > c2:
            return -self.get(c2, c)
        return float(self.values[self.pairs.index((c, c2))])

    def as_dict(self):
        return {p: float(v) for p, v in zip(self.pairs, self.values)}


def contrast_values(contrasts):
    """Pairwise differences from reference-cluster contrasts (C-1,) or (..., C-1)."""
    a = np.asarray(contrasts, dtype=float)
    full = np.concatenate([np.zeros(a.shape[:-1] + (1,)), a], axis=-1)
    C = full.shape[-1]
    i, j = np.triu_indices(C, k=1)
    return full[..., j] - full[..., i]


def expand_contrasts(fit):
    return ContrastSet(C=fit.C, values=contrast_values(fit.contrasts))


def fit_health_occupied(kind, H, labels, X=None, C=None):
    """Health fit restricted to the occupied clusters.

    Returns a ContrastSet over all C clusters in which contrasts that
    involve an empty cluster are NaN (not estimable).
    """
    labels = np.asarray(labels)
    C = _infer_C(labels, C)
    present = np.flatnonzero(np.bincount(labels, minlength=C + 1)[1:C + 1]) + 1
    if present.size < 2:
        raise FailedClassification("fewer than two occupied clusters")
    relabelled = np.searchsorted(present, labels) + 1
    fit = fit_health(kind, H, relabelled, X, present.size)
    full = np.full(C, np.nan)
    full[present - 1] = np.concatenate([[0.0], fit.contrasts])
    i, j = np.triu_indices(C, k=1)
    return ContrastSet(C=C, values=full[j] - full[i])


def design_matrix(labels, C, X=None):
    labels = np.asarray(labels)
    n = labels.shape[0]
    dummies = (labels[:, None] == np.arange(2, C + 1)).astype(float)
    parts = [np.ones((n, 1)), dummies]
    if X is not None and np.size(X):
        parts.append(np.asarray(X, dtype=float).reshape(n, -1))
    return np.hstack(parts)


def _check_occupied(labels, C):
    counts = np.bincount(np.asarray(labels), minlength=C + 1)[1:C + 1]
    if counts.min() == 0:
        raise FailedClassification(f"cluster {int(np.argmin(counts)) + 1} is empty")


def _infer_C(labels, C):
    return int(np.max(labels)) if C is None else int(C)


def fit_linear(H, labels, X=None, C=None):
    """OLS fit of the linear health model."""
    H = np.asarray(H, dtype=float)
    C = _infer_C(labels, C)
    _check_occupied(labels, C)
    A = design_matrix(labels, C, X)
    coef, _, rank, _ = np.linalg.lstsq(A, H, rcond=None)
    if rank < A.shape[1]:
        raise SingularDesignError(f"design rank {rank} < {A.shape[1]} columns")
    resid = H - A @ coef
    dof = A.shape[0] - rank
    sigma_e = float(np.sqrt(resid @ resid / dof)) if dof > 0 else 0.0
    return HealthFit.from_coef("linear", C, coef, sigma_e)


def _logistic_precheck(H, labels, C):
    if not np.all((H == 0) | (H == 1)):
        raise ValueError("logistic outcome must be binary 0/1")
    if H.min() == H.max():
        raise SeparationError("only one outcome class present")
    for c in range(1, C + 1):
        h = H[labels == c]
        if h.min() == h.max():
            raise SeparationError(f"outcome constant within cluster {c}")


def fit_logistic(H, labels, X=None, C=None):
    """Logistic health model by IRLS (Newton-Raphson)."""
    H = np.asarray(H, dtype=float)
    labels = np.asarray(labels)
    C = _infer_C(labels, C)
    _check_occupied(labels, C)
    _logistic_precheck(H, labels, C)
    A = design_matrix(labels, C, X)
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise SingularDesignError("logistic design is rank deficient")
    beta = np.zeros(A.shape[1])
    p0 = H.mean()
    beta[0] = np.log(p0 / (1 - p0))
    for _ in range(LOGIT_MAX_ITER):
        eta = A @ beta
        p = 0.5 * (1.0 + np.tanh(0.5 * eta))
        w = np.maximum(p * (1.0 - p), 1e-300)
        step = np.linalg.solve((A * w[:, None]).T @ A, A.T @ (H - p))
        beta = beta + step
        if np.max(np.abs(step)) < LOGIT_TOL:
            p = 0.5 * (1.0 + np.tanh(0.5 * (A @ beta)))
            if p.max() > 1 - PROB_EDGE or p.min() < PROB_EDGE:
                if np.max(np.abs(beta)) > 15:
                    raise SeparationError("fitted probabilities at 0/1 with diverging coefficients")
            return HealthFit.from_coef("logistic", C, beta)
    p = 0.5 * (1.0 + np.tanh(0.5 * (A @ beta)))
    if p.max() > 1 - PROB_EDGE or p.min() < PROB_EDGE:
        raise SeparationError("fitted probabilities at 0/1 with diverging coefficients")
    raise ConvergenceError("IRLS did not converge", best=HealthFit.from_coef("logistic", C, beta))


def fit_health(kind, H, labels, X=None, C=None):
    if kind == "linear":
        return fit_linear(H, labels, X, C)
    if kind == "logistic":
        return fit_logistic(H, labels, X, C)
    raise ValueError(f"unknown health model kind {kind!r}")


def score_vector(fit, H, labels, X=None):
    """Gradient of the log-likelihood (logistic) or normal equations (linear)."""
    A = design_matrix(labels, fit.C, X)
    eta = A @ fit.coef
    mean = eta if fit.kind == "linear" else 0.5 * (1.0 + np.tanh(0.5 * eta))
    return A.T @ (np.asarray(H, dtype=float) - mean)


# batched fits ---------------------------------------------------------------

def _batch_design(labels, C, X):
    """labels (L, n) -> design (L, n, P)."""
    L, n = labels.shape
    dummies = (labels[..., None] == np.arange(2, C + 1)).astype(float)
    parts = [np.ones((L, n, 1)), dummies]
    if X is not None and np.size(X):
        X = np.asarray(X, dtype=float).reshape(n, -1)
        parts.append(np.broadcast_to(X, (L,) + X.shape))
    return np.concatenate(parts, axis=2)


def _batch_valid(labels, C):
    counts = np.stack([(labels == c).sum(axis=1) for c in range(1, C + 1)], axis=1)
    return counts.min(axis=1) > 0


def fit_linear_batch(H, labels, X=None, C=None, return_var=False):
    """OLS for each row of ``labels`` (L, n).

    Returns ``(coef, ok)``: coef is (L, P) with NaN rows where the fit
    failed (empty cluster or singular design). With ``return_var`` a third
    array holds the sampling variances (diagonal of the covariance).
    """
    labels = np.asarray(labels)
    C = _infer_C(labels, C)
    H = np.asarray(H, dtype=float)
    ok = _batch_valid(labels, C)
    A = _batch_design(labels, C, X)
    L, _, P = A.shape
    coef = np.full((L, P), np.nan)
    var = np.full((L, P), np.nan)
    idx = np.flatnonzero(ok)
    if idx.size:
        Av = A[idx]
        AtA = np.einsum("lnp,lnq->lpq", Av, Av)
        Aty = np.einsum("lnp,n->lp", Av, H)
        good = np.linalg.cond(AtA) < 1e12
        if good.any():
            g = idx[good]
            coef[g] = np.linalg.solve(AtA[good], Aty[good][..., None])[..., 0]
            if return_var:
                resid = H - np.einsum("lnp,lp->ln", Av[good], coef[g])
                dof = max(H.size - P, 1)
                s2 = np.einsum("ln,ln->l", resid, resid) / dof
                var[g] = s2[:, None] * np.diagonal(np.linalg.inv(AtA[good]), axis1=1, axis2=2)
        ok = ok.copy()
        ok[idx[~good]] = False
    return (coef, ok, var) if return_var else (coef, ok)


def fit_logistic_batch(H, labels, X=None, C=None, return_var=False):
    """IRLS run in lock-step across replicates. Same return convention."""
    labels = np.asarray(labels)
    C = _infer_C(labels, C)
    H = np.asarray(H, dtype=float)
    L = labels.shape[0]
    ok = _batch_valid(labels, C)
    for c in range(1, C + 1):
        inside = labels == c
        n_in = inside.sum(axis=1)
        cases = (inside * H).sum(axis=1)
        ok &= (cases > 0) & (cases < n_in)
    A = _batch_design(labels, C, X)
    P = A.shape[2]
    coef = np.full((L, P), np.nan)
    var = np.full((L, P), np.nan)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return (coef, ok, var) if return_var else (coef, ok)
    Av = A[idx]
    p0 = H.mean()
    beta = np.zeros((idx.size, P))
    beta[:, 0] = np.log(p0 / (1 - p0))
    active = np.ones(idx.size, dtype=bool)
    converged = np.zeros(idx.size, dtype=bool)
    for _ in range(LOGIT_MAX_ITER):
        a = np.flatnonzero(active)
        if a.size == 0:
            break
        Aa = Av[a]
        eta = np.einsum("lnp,lp->ln", Aa, beta[a])
        p = 0.5 * (1.0 + np.tanh(0.5 * eta))
        w = np.maximum(p * (1.0 - p), 1e-300)
        hess = np.einsum("lnp,ln,lnq->lpq", Aa, w, Aa)
        grad = np.einsum("lnp,ln->lp", Aa, H - p)
        try:
            step = np.linalg.solve(hess, grad[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.stack([np.linalg.lstsq(h, g, rcond=None)[0] for h, g in zip(hess, grad)])
        beta[a] += step
        done = np.max(np.abs(step), axis=1) < LOGIT_TOL
        converged[a[done]] = True
        active[a[done]] = False
    good = converged & (np.max(np.abs(beta), axis=1) < 30)
    coef[idx[good]] = beta[good]
    if return_var and good.any():
        Ag = Av[good]
        p = 0.5 * (1.0 + np.tanh(0.5 * np.einsum("lnp,lp->ln", Ag, beta[good])))
        hess = np.einsum("lnp,ln,lnq->lpq", Ag, p * (1.0 - p), Ag)
        var[idx[good]] = np.diagonal(np.linalg.pinv(hess), axis1=1, axis2=2)
    ok = ok.copy()
    ok[idx[~good]] = False
    return (coef, ok, var) if return_var else (coef, ok)


def fit_health_batch(kind, H, labels, X=None, C=None, return_var=False):
    if kind == "linear":
        return fit_linear_batch(H, labels, X, C, return_var)
    if kind == "logistic":
        return fit_logistic_batch(H, labels, X, C, return_var)
    raise ValueError(f"unknown health model kind {kind!r}")
