"""Random-intercept error model on the Box-Cox scale.

For component m the transformed daily reports follow

    g(y*_it) = beta0 + x_i beta [+ beta_H h_i] + u_i + eps_it,
    u_i ~ N(0, s2_u),  eps_it ~ N(0, s2_eps),

fitted by full maximum likelihood. For fixed lambda the fixed effects and
``s2_eps`` are profiled out in closed form (GLS), leaving a 1-D search
over the variance ratio ``gamma = s2_u / s2_eps``. Lambda itself is
profiled on top, with the Box-Cox Jacobian added to the likelihood.

Everything is computed from per-individual sufficient statistics
(T_i, sum_t z, sum_t z^2) so one likelihood evaluation is O(I).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from . import boxcox
from .errors import ConvergenceError, DegenerateVarianceError

LAMBDA_BOUNDS = (0.05, 2.0)
N_COARSE = 20
MAX_OUTER = 200
MAX_INNER = 100
TOL = 1e-8
_RHO_MAX = 1.0 - 1e-10

BLUP_MODES = ("standard", "between")


@dataclass
class IndividualRecord:
    id: object
    covariates: np.ndarray
    T: int
    reports: np.ndarray
    outcome: float | None = None


@dataclass(frozen=True)
class ExposurePanel:
    """Repeated reports of M exposures for I individuals.

    ``reports`` is in long layout, rows grouped by individual in order, so
    individual i owns rows ``offsets[i]:offsets[i] + T[i]``.
    """

    T: np.ndarray
    reports: np.ndarray
    covariates: np.ndarray | None = None
    outcome: np.ndarray | None = None
    ids: np.ndarray | None = None
    exposure_names: tuple = ()
    covariate_names: tuple = ()
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        T = np.asarray(self.T, dtype=int)
        reports = np.asarray(self.reports, dtype=float)
        if reports.ndim == 1:
            reports = reports[:, None]
        if T.ndim != 1 or T.size == 0 or np.any(T < 1):
            raise ValueError("every individual needs at least one report day (T_i >= 1)")
        if reports.shape[0] != T.sum():
            raise ValueError(f"reports has {reports.shape[0]} rows but sum(T) = {T.sum()}")
        I = T.size
        X = self.covariates
        X = np.zeros((I, 0)) if X is None else np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != I:
            raise ValueError("covariates must have one row per individual")
        H = None if self.outcome is None else np.asarray(self.outcome, dtype=float)
        if H is not None and H.shape != (I,):
            raise ValueError("outcome must have one value per individual")
        ids = np.arange(I) if self.ids is None else np.asarray(self.ids)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "reports", reports)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "outcome", H)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "offsets", np.concatenate([[0], np.cumsum(T)[:-1]]))
        if not self.exposure_names:
            names = tuple(f"y_{m + 1}" for m in range(reports.shape[1]))
            object.__setattr__(self, "exposure_names", names)

    @property
    def n_individuals(self):
        return self.T.size

    @property
    def n_components(self):
        return self.reports.shape[1]

    @property
    def subject(self):
        return np.repeat(np.arange(self.n_individuals), self.T)

    def group_sum(self, values):
        """Sum long-layout rows per individual (works on trailing axes too)."""
        return np.add.reduceat(values, self.offsets, axis=0)

    def individual_means(self, values=None):
        values = self.reports if values is None else values
        s = self.group_sum(values)
        return s / self.T.reshape((-1,) + (1,) * (s.ndim - 1))

    def with_outcome(self, outcome):
        return replace(self, outcome=outcome)

    def validate_positive(self):
        if np.any(~(self.reports > 0)):
            raise ValueError("Box-Cox error model requires strictly positive reports")

    def individual(self, i):
        o = self.offsets[i]
        return IndividualRecord(
            id=self.ids[i],
            covariates=self.covariates[i],
            T=int(self.T[i]),
            reports=self.reports[o:o + self.T[i]],
            outcome=None if self.outcome is None else float(self.outcome[i]),
        )


@dataclass(frozen=True)
class ComponentFit:
    """ML estimates for one component. ``lam=None`` means untransformed."""

    lam: float | None
    beta0: float
    beta: np.ndarray
    sigma2_u: float
    sigma2_eps: float
    loglik: float
    include_outcome: bool = False

    @property
    def beta_outcome(self):
        return float(self.beta[-1]) if self.include_outcome else 0.0

    def fixed_part(self, covariates, outcome=None):
        X = np.atleast_2d(np.asarray(covariates, dtype=float))
        beta_x = self.beta[:-1] if self.include_outcome else self.beta
        f = self.beta0 + X @ beta_x
        if self.include_outcome:
            if outcome is None:
                raise ValueError("fit includes the outcome; an outcome value is required")
            f = f + self.beta[-1] * np.asarray(outcome, dtype=float)
        return f

    def to_dict(self):
        return {
            "lambda": self.lam,
            "beta0": self.beta0,
            "beta": [float(b) for b in self.beta],
            "sigma2_u": self.sigma2_u,
            "sigma2_eps": self.sigma2_eps,
            "loglik": self.loglik,
            "include_outcome": self.include_outcome,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            lam=None if d["lambda"] is None else float(d["lambda"]),
            beta0=float(d["beta0"]),
            beta=np.asarray(d["beta"], dtype=float),
            sigma2_u=float(d["sigma2_u"]),
            sigma2_eps=float(d["sigma2_eps"]),
            loglik=float(d["loglik"]),
            include_outcome=bool(d["include_outcome"]),
        )


@dataclass(frozen=True)
class ErrorModelFit:
    components: tuple
    include_outcome: bool = False

    def __getitem__(self, m):
        return self.components[m]

    def __len__(self):
        return len(self.components)

    @property
    def lambdas(self):
        return [c.lam for c in self.components]

    def to_dict(self):
        return {
            "include_outcome": self.include_outcome,
            "M": len(self.components),
            "components": [c.to_dict() for c in self.components],
        }

    @classmethod
    def from_dict(cls, d):
        comps = tuple(ComponentFit.from_dict(c) for c in d["components"])
        return cls(components=comps, include_outcome=bool(d["include_outcome"]))


@dataclass
class _Stats:
    T: np.ndarray
    S: np.ndarray
    Q: np.ndarray
    D: np.ndarray
    N: int


def _design(panel, include_outcome):
    I = panel.n_individuals
    cols = [np.ones((I, 1)), panel.covariates]
    if include_outcome:
        if panel.outcome is None:
            raise ValueError("include_outcome requires an outcome for every individual")
        cols.append(panel.outcome[:, None])
    return np.hstack(cols)


def _stats(z, panel, D):
    S = panel.group_sum(z)
    Q = panel.group_sum(z * z)
    return _Stats(T=panel.T.astype(float), S=S, Q=Q, D=D, N=int(panel.T.sum()))


def gls_profile(st, gamma):
    """Profile out (beta, s2_eps) for a fixed variance ratio.

    Returns ``(coef, sigma2_eps, loglik)`` without the Jacobian term.
    With ``gamma = 0`` this is ordinary least squares on the long data.
    """
    a = 1.0 / (1.0 + gamma * st.T)
    A = (st.D * (st.T * a)[:, None]).T @ st.D
    b = st.D.T @ (a * st.S)
    coef = np.linalg.solve(A, b)
    f = st.D @ coef
    rss_plain = st.Q - 2.0 * f * st.S + st.T * f * f
    resid_sum = st.S - st.T * f
    rss = np.sum(rss_plain - gamma * a * resid_sum * resid_sum)
    s2 = max(rss / st.N, 1e-300)
    ll = -0.5 * st.N * (math.log(2.0 * math.pi * s2) + 1.0) - 0.5 * np.sum(np.log1p(gamma * st.T))
    return coef, s2, ll


def _fit_fixed_lambda(st):
    """Maximise over gamma >= 0 for given transformed data."""

    def negll(rho):
        return -gls_profile(st, rho / (1.0 - rho))[2]

    res = minimize_scalar(
        negll, bounds=(0.0, _RHO_MAX), method="bounded",
        options={"xatol": 1e-10, "maxiter": MAX_INNER},
    )
    candidates = [(0.0, -negll(0.0)), (float(res.x), -float(res.fun))]
    rho, ll = max(candidates, key=lambda c: c[1])
    gamma = rho / (1.0 - rho)
    coef, s2, ll = gls_profile(st, gamma)
    converged = bool(res.success) or rho == 0.0
    return coef, s2, gamma, ll, converged


def _component_loglik(y, lam, panel, D, logsum_y):
    z = boxcox.forward(y, lam)
    st = _stats(z, panel, D)
    coef, s2, gamma, ll, ok = _fit_fixed_lambda(st)
    if lam is not None:
        ll += (lam - 1.0) * logsum_y
    return coef, s2, gamma, ll, ok


def profile_loglik(panel, m, lam, include_outcome=False):
    """Log-likelihood maximised over (beta, s2_u, s2_eps) at fixed lambda."""
    y = panel.reports[:, m]
    D = _design(panel, include_outcome)
    logsum = float(np.sum(np.log(y))) if lam is not None else 0.0
    return _component_loglik(y, lam, panel, D, logsum)[3]


def _check_identifiable(panel, y):
    if np.sum(panel.T >= 2) < 2:
        raise ValueError("need at least 2 individuals with T_i >= 2 to separate the variance components")
    if np.ptp(y) == 0:
        raise DegenerateVarianceError("all reports identical")
    within = panel.group_sum(y * y) - panel.group_sum(y) ** 2 / panel.T
    if np.all(within <= 1e-14 * max(1.0, float(np.max(y * y)))):
        raise DegenerateVarianceError("no within-individual variation in reports")


def fit_component(panel, m, include_outcome=False, lam="estimate", lambda_bounds=LAMBDA_BOUNDS):
    """Fit the error model for a single component.

    Parameters
    ----------
    panel : ExposurePanel
    m : int
        Component index (0-based).
    include_outcome : bool
        Add the panel outcome as an extra fixed-effect covariate.
    lam : "estimate", float or None
        ``"estimate"`` profiles lambda over ``lambda_bounds`` (20-point grid
        followed by bounded golden-section/Brent refinement). A float fixes
        it; ``None`` fits on the untransformed scale.

    Raises
    ------
    DegenerateVarianceError
        Reports have no (within-individual) variation.
    ConvergenceError
        Iteration cap reached; ``.best`` holds the best-so-far fit.
    """
    y = panel.reports[:, m]
    _check_identifiable(panel, y)
    D = _design(panel, include_outcome)
    if lam is None:
        logsum = 0.0
    else:
        if np.any(~(y > 0)):
            raise ValueError("Box-Cox error model requires strictly positive reports")
        logsum = float(np.sum(np.log(y)))

    converged = True
    if lam == "estimate":
        lo, hi = lambda_bounds
        grid = np.linspace(lo, hi, N_COARSE)
        vals = [_component_loglik(y, g, panel, D, logsum)[3] for g in grid]
        k = int(np.argmax(vals))
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, N_COARSE - 1)]
        res = minimize_scalar(
            lambda g: -_component_loglik(y, g, panel, D, logsum)[3],
            bounds=(a, b), method="bounded",
            options={"xatol": 1e-7, "maxiter": MAX_OUTER - N_COARSE},
        )
        lam_hat = float(res.x) if -res.fun >= vals[k] else float(grid[k])
        converged = bool(res.success)
    else:
        lam_hat = None if lam is None else float(lam)

    coef, s2, gamma, ll, ok = _component_loglik(y, lam_hat, panel, D, logsum)
    fit = ComponentFit(
        lam=lam_hat,
        beta0=float(coef[0]),
        beta=np.asarray(coef[1:], dtype=float),
        sigma2_u=float(gamma * s2),
        sigma2_eps=float(s2),
        loglik=float(ll),
        include_outcome=include_outcome,
    )
    if not (converged and ok):
        raise ConvergenceError(f"error-model fit for component {m} did not converge", best=fit)
    return fit


def fit_error_model(panel, include_outcome=False, lam="estimate"):
    """Fit every component independently.

    ``lam`` may be a single spec applied to all components or a sequence
    with one entry per component.
    """
    M = panel.n_components
    lams = list(lam) if isinstance(lam, (list, tuple)) else [lam] * M
    comps = tuple(fit_component(panel, m, include_outcome, lams[m]) for m in range(M))
    return ErrorModelFit(components=comps, include_outcome=include_outcome)


def blup_weight(sigma2_u, sigma2_eps, T, mode="standard"):
    """Weight placed on the fixed-effect prediction.

    ``"standard"`` is the usual shrinkage ``(s2_eps/T) / (s2_u + s2_eps/T)``.
    ``"between"`` uses the between-person share ``s2_u / (s2_u + s2_eps)``
    for everyone, whatever their number of days.
    """
    if mode == "standard":
        noise = sigma2_eps / np.asarray(T, dtype=float)
        denom = sigma2_u + noise
        return np.divide(noise, denom, out=np.ones_like(noise), where=denom > 0)
    if mode == "between":
        denom = sigma2_u + sigma2_eps
        w = sigma2_u / denom if denom > 0 else 1.0
        return np.full(np.shape(T), w, dtype=float)
    raise ValueError(f"unknown BLUP mode {mode!r}; expected one of {BLUP_MODES}")


def blup_transformed(fit, individual, include_outcome=None, mode="standard"):
    """Transformed-scale usual-exposure prediction for one individual."""
    if individual.T < 1:
        raise ValueError("BLUP needs at least one report (T_i >= 1)")
    include_outcome = fit.include_outcome if include_outcome is None else include_outcome
    if include_outcome != fit.include_outcome:
        raise ValueError("include_outcome does not match the fitted model")
    reports = np.asarray(individual.reports, dtype=float)
    z_bar = float(np.mean(boxcox.forward(reports, fit.lam)))
    fixed = float(fit.fixed_part(individual.covariates, individual.outcome)[0])
    w = float(blup_weight(fit.sigma2_u, fit.sigma2_eps, individual.T, mode))
    return w * fixed + (1.0 - w) * z_bar


def blup_all(fit, panel, m, mode="standard"):
    """Vectorised :func:`blup_transformed` for component m of every individual."""
    z = boxcox.forward(panel.reports[:, m], fit.lam)
    z_bar = panel.individual_means(z)
    fixed = fit.fixed_part(panel.covariates, panel.outcome if fit.include_outcome else None)
    w = blup_weight(fit.sigma2_u, fit.sigma2_eps, panel.T, mode)
    return w * fixed + (1.0 - w) * z_bar
