"""Three-stage pipelines: naive, regression calibration, SIMEX and MI.

Each pipeline
(1) estimates usual exposures,
(2) fits or receives a clustering function and freezes it, and
(3) fits the health model on the dummy-coded memberships.

SIMEX and MI replicate stage 3 many times with the frozen classifier, so
their inner loops run in chunks through the batched health-model fits.
Every replicate draws from its own keyed random stream.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import boxcox
from .cluster import ClusterModel, classify_many, fit_cluster
from .errors import ConvergenceError, FailedClassification, MethodFailure
from .health_model import (
    ContrastSet,
    HealthFit,
    contrast_values,
    expand_contrasts,
    fit_health,
    fit_health_batch,
)
from .mixed_model import blup_all, fit_error_model
from .nci import estimate_usual
from .streams import CLUSTER, STAGE, substream

logger = logging.getLogger(__name__)

DEFAULT_ZETA = tuple(k / 4 for k in range(1, 9))
SIMEX_MAX_FAIL = 0.5
MI_MAX_DROP = 0.2
MI_REDRAWS = 5
ROOT_TOL = 1e-10
# below this lambda the log-scale limit replaces the Taylor equation
LAMBDA_ZERO = 1e-3
CHUNK = 100


@dataclass(frozen=True)
class SimexConfig:
    zeta_grid: tuple = DEFAULT_ZETA
    L: int = 300
    degree: int = 2

    def __post_init__(self):
        object.__setattr__(self, "zeta_grid", tuple(float(z) for z in self.zeta_grid))
        if not self.zeta_grid or min(self.zeta_grid) <= 0:
            raise ValueError("SIMEX zeta grid must be non-empty with all zeta > 0")
        if self.L < 2:
            raise ValueError("SIMEX needs L >= 2 replicates")
        if self.degree not in (2, 3, 4):
            raise ValueError("SIMEX extrapolation degree must be 2, 3 or 4")
        if len(self.zeta_grid) + 1 <= self.degree:
            raise ValueError("too few zeta points for the extrapolation degree")


@dataclass
class CorrectionResult:
    method: str                        # naive | rc | simex | mi | mi_null | gs7 | gs28
    cluster_model: ClusterModel | None = None
    health_fit: HealthFit | None = None
    contrasts: ContrastSet | None = None
    labels: np.ndarray | None = None   # stage-2 memberships of the observed individuals
    degree: int | None = None
    diagnostics: dict = field(default_factory=dict)
    failed: bool = False
    error: str = ""

    def __post_init__(self):
        if self.failed == (self.contrasts is not None):
            raise ValueError("contrasts must be present exactly when the method did not fail")

    @property
    def tag(self):
        if self.method == "simex":
            return {2: "simex_q", 3: "simex_c", 4: "simex_q4"}[self.degree]
        return self.method

    @classmethod
    def failure(cls, method, exc, degree=None, **diagnostics):
        logger.info("%s failed: %s", method, exc)
        return cls(method=method, degree=degree, failed=True, error=f"{type(exc).__name__}: {exc}",
                   diagnostics=dict(diagnostics))


# shared stages ---------------------------------------------------------------

def _stage2(exposures, C, cluster_method, seed, key, classifier):
    if classifier is not None:
        return classifier
    rng = substream(seed, STAGE[key], CLUSTER)
    return fit_cluster(cluster_method, exposures, C, rng_seed=rng, provenance=key)


def _stage3(health, panel, labels, C):
    if panel.outcome is None:
        raise ValueError("panel has no health outcome")
    try:
        return fit_health(health, panel.outcome, labels, panel.covariates, C)
    except ConvergenceError as exc:
        raise MethodFailure(str(exc)) from exc


def _result(method, model, fit, labels, **diagnostics):
    return CorrectionResult(method=method, cluster_model=model, health_fit=fit,
                            contrasts=expand_contrasts(fit), labels=labels,
                            diagnostics=diagnostics)


def three_stage(exposures, panel, C, cluster_method="kmeans", health="linear", seed=0,
                method="naive", classifier=None):
    """Stages 2 and 3 on given usual-exposure estimates (I, M)."""
    exposures = np.asarray(exposures, dtype=float)
    model = _stage2(exposures, C, cluster_method, seed, method, classifier)
    labels = classify_many(model, exposures)
    fit = _stage3(health, panel, labels, model.C)
    return _result(method, model, fit, labels)


def _error_fit(panel, error_fit, include_outcome, lam):
    if error_fit is None:
        try:
            return fit_error_model(panel, include_outcome=include_outcome, lam=lam)
        except ConvergenceError as exc:
            raise MethodFailure(str(exc)) from exc
    if error_fit.include_outcome != include_outcome:
        raise ValueError("supplied error-model fit has the wrong outcome setting")
    return error_fit


def naive_3sa(panel, C, cluster_method="kmeans", health="linear", seed=0, classifier=None,
              method="naive"):
    """Cluster individual means of the reports, then fit the health model.

    ``method`` only relabels the result and its random stream, which lets
    the same pipeline score gold-standard panels.
    """
    return three_stage(panel.individual_means(), panel, C, cluster_method, health, seed,
                       method, classifier)


def rc_3sa(panel, C, cluster_method="kmeans", health="linear", seed=0, classifier=None,
           error_fit=None, blup_mode="standard", lam="estimate"):
    """Regression calibration: cluster NCI usual-exposure estimates."""
    fit_em = _error_fit(panel, error_fit, False, lam)
    usual = estimate_usual(fit_em, panel, blup_mode)
    res = three_stage(usual.values, panel, C, cluster_method, health, seed, "rc", classifier)
    res.diagnostics["n_clamped"] = usual.n_clamped.tolist()
    return res


# SIMEX -------------------------------------------------------------------------

def _taylor_residual(mu, ybar, ybar_g, lam, zeta, sigma2_eps):
    base = lam * (ybar_g + mu) + 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        return (base ** (1.0 / lam)
                + 0.5 * (1.0 - lam) * base ** (1.0 / lam - 2.0) * zeta * sigma2_eps - ybar)


def linearized_mu(ybar_g, lam, zeta, sigma2_eps):
    """First-order solution; fallback when the bracket has no sign change."""
    return -(1.0 - lam) * zeta * sigma2_eps / (2.0 * (lam * np.asarray(ybar_g, dtype=float) + 1.0))


def _bracket(ybar_g, lam, zeta, sigma2_eps):
    if lam < 1:
        lo = np.maximum(-0.5 * zeta * sigma2_eps, -1.0 / lam - ybar_g)
        hi = np.zeros_like(lo)
    else:
        hi = np.maximum(0.5 * zeta * sigma2_eps, 4.0 * np.abs(linearized_mu(ybar_g, lam, zeta, sigma2_eps)))
        lo = np.zeros_like(hi)
    return lo, hi


def _trivial_mu(lam, zeta, sigma2_eps):
    if lam is None or abs(lam - 1.0) < 1e-12:
        return 0.0
    if lam < LAMBDA_ZERO:
        return -0.5 * zeta * sigma2_eps
    return None


def solve_corrective_mu(ybar_orig, ybar_transformed, lam, zeta, sigma2_eps, full_output=False):
    """Corrective mean of the SIMEX noise for one individual and component.

    Solves, for mu,

        ybar = (lam*(ybar_g + mu) + 1)**(1/lam)
               + (1 - lam)/2 * (lam*(ybar_g + mu) + 1)**(1/lam - 2) * zeta * s2

    with Brent's method, so that adding ``N(mu, zeta*s2)`` noise on the
    transformed scale keeps the original-scale mean in place. The search
    runs over ``(max(-zeta*s2/2, -1/lam - ybar_g), 0)`` for lam < 1 and over
    a positive bracket for lam > 1. Lambda 1 (and the identity scale) gives
    0; lambda near 0 gives the log-scale solution ``-zeta*s2/2``.

    Without a sign change the first-order solution
    :func:`linearized_mu` is returned. With ``full_output`` the return
    value is ``(mu, solved)`` where ``solved`` is False for the fallback.
    """
    if not zeta > 0:
        raise ValueError("zeta must be > 0")
    mu = _trivial_mu(lam, zeta, sigma2_eps)
    if mu is not None:
        return (mu, True) if full_output else mu
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    lo, hi = (float(v) for v in _bracket(np.float64(ybar_transformed), lam, zeta, sigma2_eps))
    f = lambda m: float(_taylor_residual(m, ybar_orig, ybar_transformed, lam, zeta, sigma2_eps))
    eps = 1e-12 * max(1.0, abs(lo), abs(hi))
    a, b = lo + eps, hi
    fa, fb = f(a), f(b)
    if np.isfinite(fa) and np.isfinite(fb) and fa * fb <= 0:
        mu = 0.0 if fb == 0 else brentq(f, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
        return (mu, True) if full_output else mu
    mu = float(linearized_mu(ybar_transformed, lam, zeta, sigma2_eps))
    logger.debug("corrective mean: no sign change, linearized fallback %.6g", mu)
    return (mu, False) if full_output else mu


def corrective_mu_array(ybar, ybar_g, lam, zeta, sigma2_eps, n_iter=200):
    """Vectorised :func:`solve_corrective_mu` by bisection.

    Returns ``(mu, solved)`` arrays of the shape of ``ybar``.
    """
    ybar = np.asarray(ybar, dtype=float)
    ybar_g = np.asarray(ybar_g, dtype=float)
    mu0 = _trivial_mu(lam, zeta, sigma2_eps)
    if mu0 is not None:
        return np.full(ybar.shape, mu0), np.ones(ybar.shape, dtype=bool)
    lo, hi = _bracket(ybar_g, lam, zeta, sigma2_eps)
    lo = lo + 1e-12 * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
    flo = _taylor_residual(lo, ybar, ybar_g, lam, zeta, sigma2_eps)
    fhi = _taylor_residual(hi, ybar, ybar_g, lam, zeta, sigma2_eps)
    solved = np.isfinite(flo) & np.isfinite(fhi) & (flo * fhi <= 0)
    a, b, fa = lo.copy(), hi.copy(), flo.copy()
    for _ in range(n_iter):
        mid = 0.5 * (a + b)
        fm = _taylor_residual(mid, ybar, ybar_g, lam, zeta, sigma2_eps)
        left = np.sign(fm) == np.sign(fa)
        a = np.where(left, mid, a)
        fa = np.where(left, fm, fa)
        b = np.where(left, b, mid)
        if np.all((b - a)[solved] <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(a[solved]))):
            break
    mu = np.where(solved, 0.5 * (a + b), linearized_mu(ybar_g, lam, zeta, sigma2_eps))
    return mu, solved


def extrapolate(zetas, values, degree, at=-1.0):
    """Least-squares polynomial in zeta through ``values`` evaluated at ``at``.

    ``values`` is (K,) or (K, P); the fit is unweighted.
    """
    zetas = np.asarray(zetas, dtype=float)
    values = np.asarray(values, dtype=float)
    if zetas.size <= degree:
        raise ValueError("need more points than the polynomial degree")
    coef = np.polyfit(zetas, values, degree)
    powers = float(at) ** np.arange(degree, -1, -1)
    return powers @ coef


@dataclass
class SimexPoints:
    zetas: np.ndarray                  # (K+1,), first entry 0
    coefs: np.ndarray                  # (K+1, P) mean health coefficients
    naive: CorrectionResult
    diagnostics: dict


def _inverse_columns(t, lams):
    out = np.empty_like(t)
    for m, lam in enumerate(lams):
        out[..., m] = boxcox.backward(t[..., m], lam)
    return out


def _replicate_noise(gens, shape):
    return np.stack([g.standard_normal(shape) for g in gens])


def _fill_untransformable(t, y, gens, lams, scale, offset, redraws):
    """Re-draw noise for untransformable entries, then clamp to the boundary.

    ``t = offset + scale * Z`` per replicate; each replicate's extra draws
    come from its own generator, after its main draw.
    """
    n_redrawn = n_clamped = 0
    for l, g in enumerate(gens):
        bad = np.isnan(y[l])
        for _ in range(redraws):
            if not bad.any():
                break
            rows, cols = np.nonzero(bad)
            n_redrawn += rows.size
            tl = offset[rows, cols] + scale[cols] * g.standard_normal(rows.size)
            t[l, rows, cols] = tl
            for m in np.unique(cols):
                sel = cols == m
                y[l, rows[sel], cols[sel]] = boxcox.backward(tl[sel], lams[m])
            bad = np.isnan(y[l])
        if bad.any():
            n_clamped += int(bad.sum())
            y[l][bad] = 0.0
    return n_redrawn, n_clamped


def _replicate_fits(health, panel, model, means, C):
    """Classify replicate means (L, I, M) and fit the health model on each."""
    L, I, M = means.shape
    labels = classify_many(model, means.reshape(L * I, M)).reshape(L, I)
    return fit_health_batch(health, panel.outcome, labels, panel.covariates, C, return_var=True)


def simex_points(panel, C, cluster_method="kmeans", health="linear", config=None, seed=0,
                 classifier=None, error_fit=None, lam="estimate", naive=None):
    """SIMEX remeasurement points (steps 1 to 6).

    The zeta=0 point is the naive estimate itself.
    """
    config = SimexConfig() if config is None else config
    fit_em = _error_fit(panel, error_fit, False, lam)
    if naive is None:
        naive = naive_3sa(panel, C, cluster_method, health, seed, classifier)
    model = naive.cluster_model
    fingerprint = model.fingerprint()
    lams = fit_em.lambdas
    s2 = np.array([c.sigma2_eps for c in fit_em])
    z = np.column_stack([boxcox.forward(panel.reports[:, m], lams[m]) for m in range(panel.n_components)])
    ybar = panel.individual_means()
    ybar_g = panel.individual_means(z)
    subject = panel.subject
    N, M = z.shape
    code = STAGE["simex"]

    points = [naive.health_fit.coef]
    n_fail, n_fallback, n_redrawn, n_clamped = [], [], 0, 0
    for k, zeta in enumerate(config.zeta_grid, start=1):
        mu = np.empty_like(ybar)
        fallback = 0
        for m in range(M):
            mu[:, m], solved = corrective_mu_array(ybar[:, m], ybar_g[:, m], lams[m], zeta, s2[m])
            fallback += int((~solved).sum())
        n_fallback.append(fallback)
        offset = z + mu[subject]
        scale = np.sqrt(zeta * s2)
        coefs, oks = [], []
        for start in range(0, config.L, CHUNK):
            ls = range(start, min(start + CHUNK, config.L))
            gens = [substream(seed, code, k, l) for l in ls]
            t = offset + scale * _replicate_noise(gens, (N, M))
            y = _inverse_columns(t, lams)
            r, c = _fill_untransformable(t, y, gens, lams, scale, offset, redraws=1)
            n_redrawn += r
            n_clamped += c
            means = np.add.reduceat(y, panel.offsets, axis=1) / panel.T[None, :, None]
            coef, ok, _ = _replicate_fits(health, panel, model, means, C)
            if model.fingerprint() != fingerprint:
                raise RuntimeError("cluster model changed during SIMEX replicates")
            coefs.append(coef)
            oks.append(ok)
        coef = np.concatenate(coefs)
        ok = np.concatenate(oks)
        n_fail.append(int((~ok).sum()))
        if (~ok).mean() > SIMEX_MAX_FAIL:
            raise FailedClassification(
                f"SIMEX: {int((~ok).sum())} of {config.L} replicates failed at zeta={zeta}")
        points.append(coef[ok].mean(axis=0))
    diagnostics = {
        "n_failed": n_fail, "n_fallback_mu": n_fallback,
        "n_redrawn": n_redrawn, "n_clamped": n_clamped, "fingerprint": fingerprint,
    }
    if sum(n_fallback):
        logger.info("SIMEX corrective mean used the linearized fallback %s times per zeta", n_fallback)
    return SimexPoints(zetas=np.array((0.0,) + config.zeta_grid), coefs=np.array(points),
                       naive=naive, diagnostics=diagnostics)


def simex_from_points(points, degree, health):
    C = points.naive.health_fit.C
    coef = extrapolate(points.zetas, points.coefs, degree)
    fit = HealthFit.from_coef(health, C, coef)
    diagnostics = dict(points.diagnostics)
    diagnostics["simex_points"] = [(float(zt), c.copy()) for zt, c in zip(points.zetas, points.coefs)]
    return CorrectionResult(method="simex", cluster_model=points.naive.cluster_model, health_fit=fit,
                            contrasts=expand_contrasts(fit), labels=points.naive.labels,
                            degree=degree, diagnostics=diagnostics)


def simex_3sa(panel, C, cluster_method="kmeans", health="linear", config=None, seed=0,
              classifier=None, error_fit=None, lam="estimate"):
    """SIMEX-corrected contrasts, extrapolated to zeta = -1."""
    config = SimexConfig() if config is None else config
    pts = simex_points(panel, C, cluster_method, health, config, seed, classifier, error_fit, lam)
    return simex_from_points(pts, config.degree, health)


# MI ----------------------------------------------------------------------------

def mi_3sa(panel, C, cluster_method="kmeans", health="linear", L=20, include_outcome=True, seed=0,
           classifier=None, error_fit=None, blup_mode="standard", lam="estimate"):
    """Multiple imputation of the reported exposures.

    With ``include_outcome`` the error model conditions on the health
    outcome; without it the result is the MI-NULL variant. Each imputed
    exposure is ``g^{-1}(BLUP + Z)`` with ``Z ~ N(0, s2_eps)``.
    """
    if L < 1:
        raise ValueError("MI needs L >= 1 imputations")
    if include_outcome and panel.outcome is None:
        raise ValueError("include_outcome requires a health outcome")
    method = "mi" if include_outcome else "mi_null"
    fit_em = _error_fit(panel, error_fit, include_outcome, lam)
    usual = estimate_usual(fit_em, panel, blup_mode)
    # the MI-NULL stage 1 is the RC stage 1, so it shares RC's cluster stream
    model = _stage2(usual.values, C, cluster_method, seed, "mi" if include_outcome else "rc", classifier)
    fingerprint = model.fingerprint()
    labels_nci = classify_many(model, usual.values)
    I, M = panel.n_individuals, panel.n_components
    lams = fit_em.lambdas
    blup = np.column_stack([blup_all(c, panel, m, blup_mode) for m, c in enumerate(fit_em)])
    scale = np.sqrt([c.sigma2_eps for c in fit_em])
    code = STAGE[method]

    coefs, oks, variances = [], [], []
    n_redrawn = n_clamped = 0
    for start in range(0, L, CHUNK):
        gens = [substream(seed, code, 0, l) for l in range(start, min(start + CHUNK, L))]
        t = blup + scale * _replicate_noise(gens, (I, M))
        y = _inverse_columns(t, lams)
        r, c = _fill_untransformable(t, y, gens, lams, scale, blup, redraws=MI_REDRAWS)
        n_redrawn += r
        n_clamped += c
        coef, ok, var = _replicate_fits(health, panel, model, y, model.C)
        if model.fingerprint() != fingerprint:
            raise RuntimeError("cluster model changed during MI replicates")
        coefs.append(coef)
        oks.append(ok)
        variances.append(var)
    coef = np.concatenate(coefs)
    ok = np.concatenate(oks)
    var = np.concatenate(variances)
    n_drop = int((~ok).sum())
    if n_drop > MI_MAX_DROP * L:
        raise FailedClassification(f"MI: {n_drop} of {L} imputations dropped")
    used = coef[ok]
    estimate = used.mean(axis=0)
    within = var[ok].mean(axis=0)
    between = used.var(axis=0, ddof=1) if used.shape[0] > 1 else np.zeros_like(estimate)
    total = within + (1.0 + 1.0 / used.shape[0]) * between
    logger.debug("MI Rubin variances: within %s between %s total %s", within, between, total)
    fit = HealthFit.from_coef(health, model.C, estimate)
    return _result(method, model, fit, labels_nci,
                   n_imputations_used=int(used.shape[0]), n_dropped=n_drop,
                   n_redrawn=n_redrawn, n_clamped=n_clamped, fingerprint=fingerprint,
                   rubin_within=within, rubin_between=between, rubin_total=total,
                   imputation_coefs=used)


# dispatch ----------------------------------------------------------------------

METHODS = ("naive", "rc", "simex", "mi", "mi_null")


def run_method(method, panel, C, cluster_method="kmeans", health="linear", seed=0, **options):
    """Run one pipeline by name; MethodFailure becomes a failed result."""
    try:
        if method == "naive":
            return naive_3sa(panel, C, cluster_method, health, seed, options.get("classifier"))
        if method == "rc":
            return rc_3sa(panel, C, cluster_method, health, seed, **options)
        if method == "simex":
            return simex_3sa(panel, C, cluster_method, health, seed=seed, **options)
        if method in ("mi", "mi_null"):
            options.setdefault("include_outcome", method == "mi")
            return mi_3sa(panel, C, cluster_method, health, seed=seed, **options)
    except MethodFailure as exc:
        degree = options["config"].degree if method == "simex" and options.get("config") else None
        return CorrectionResult.failure(method, exc, degree=degree)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


__all__ = [
    "CorrectionResult", "SimexConfig", "SimexPoints", "naive_3sa", "rc_3sa", "simex_3sa", "mi_3sa",
    "simex_points", "simex_from_points", "solve_corrective_mu", "corrective_mu_array",
    "linearized_mu", "extrapolate", "three_stage", "run_method", "contrast_values",
]
