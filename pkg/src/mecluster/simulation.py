"""Seedable simulation engine for the clustered-exposure study.

Two designs are supported:

* the main study: M skewed components on a Box-Cox scale, one to four
  report days per individual, covariates, gold-standard panels of 7 and
  28 days, and continuous or dichotomised outcomes driven by the true
  usual intake (variant A) or by true intake plus reports (variant B);
* the simple setting: one normal exposure, two days, no covariates and a
  fixed cut-off classifier at zero.

All randomness comes from streams keyed by (data key, dataset, block) or
(scenario, dataset, method, replicate), so results do not depend on how
datasets are distributed over worker processes.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from threadpoolctl import threadpool_limits

from . import boxcox, parameters
from .cluster import classify_many, fixed_cutoff_model
from .correction import (
    DEFAULT_ZETA,
    SimexConfig,
    CorrectionResult,
    mi_3sa,
    naive_3sa,
    rc_3sa,
    simex_from_points,
    simex_points,
    three_stage,
)
from .errors import ConvergenceError, MethodFailure
from .health_model import fit_health_occupied
from .measures import adjusted_rand_index, dataset_bias, lower_median, misclassification_rate
from .mixed_model import ExposurePanel, fit_error_model
from .streams import STAGE, child_seed, stable_id, substream

logger = logging.getLogger(__name__)

METHODS = ("naive", "rc", "simex", "mi", "mi_null", "gs7", "gs28")
SIMEX_TAGS = {2: "simex_q", 3: "simex_c", 4: "simex_q4"}
OUTCOME_KEYS = {("A", "linear"): "A", ("A", "logistic"): "A-cat",
                ("B", "linear"): "B", ("B", "logistic"): "B-cat"}
CSV_COLUMNS = ("scenario_id", "method", "C", "M", "cluster_method", "corr_u", "outcome", "MR", "aRI",
               "mean_abs_bias", "max_abs_bias", "med_rel_bias", "n_failed")
SIMPLE_COLUMNS = ("scenario_id", "I", "sigma2_eH", "sigma2_eps", "sigma2_u", "blup_mode", "method",
                  "rel_bias", "n_failed")
# generation blocks
_T, _X, _U, _REPORTS, _GS, _TRUTH, _IMPUTE, _OUTCOME = range(8)


class ConfigError(ValueError):
    """Scenario configuration is invalid."""


def _as_array(x):
    return None if x is None else np.asarray(x, dtype=float)


@dataclass
class ScenarioConfig:
    """One main-study scenario. Parameter tables default to the bundled constants."""

    scenario_id: str = ""
    S: int = 100
    I: int = 500
    M: int = 5
    C: int = 3
    cluster_method: str = "kmeans"
    correlated_u: bool = False
    outcome: str = "A"
    health: str = "linear"
    seed: int = 0
    methods: tuple = METHODS
    simex_L: int = 300
    simex_degrees: tuple = (2, 3, 4)
    zeta_grid: tuple = DEFAULT_ZETA
    mi_L: int = 300
    blup_mode: str = "standard"
    t_distribution: dict = field(default_factory=lambda: dict(parameters.T_DISTRIBUTION))
    gold_standard_days: tuple = parameters.GOLD_STANDARD_DAYS
    truth_days: int = parameters.TRUTH_DAYS
    lam: np.ndarray | None = None
    beta0: np.ndarray | None = None
    beta: np.ndarray | None = None
    sigma2_u: np.ndarray | None = None
    sigma2_eps: np.ndarray | None = None
    cov_mean: np.ndarray | None = None
    cov_cov: np.ndarray | None = None
    u_corr: np.ndarray | None = None
    health_a: dict | None = None
    health_b: dict | None = None

    def __post_init__(self):
        M = self.M
        if M not in (1, 5, 9) and self.lam is None:
            raise ConfigError("M must be 1, 5 or 9 unless parameter tables are supplied")
        defaults = dict(
            lam=parameters.LAMBDA[:M], beta0=parameters.BETA0[:M], beta=parameters.BETA[:M],
            sigma2_u=parameters.SIGMA2_U[:M], sigma2_eps=parameters.SIGMA2_EPS[:M],
            cov_mean=parameters.COV_MEAN, cov_cov=parameters.COV_COV,
            u_corr=parameters.U_CORR[:M, :M],
        )
        for name, value in defaults.items():
            current = getattr(self, name)
            setattr(self, name, np.array(value, dtype=float) if current is None else _as_array(current))
        if self.health_a is None and M in parameters.HEALTH_A:
            self.health_a = dict(parameters.HEALTH_A[M])
        if self.health_b is None and M in parameters.HEALTH_B:
            self.health_b = dict(parameters.HEALTH_B[M])
        self.methods = tuple(self.methods)
        self.simex_degrees = tuple(int(d) for d in self.simex_degrees)
        self.zeta_grid = tuple(float(z) for z in self.zeta_grid)
        self.gold_standard_days = tuple(int(d) for d in self.gold_standard_days)
        self.t_distribution = {int(k): float(v) for k, v in self.t_distribution.items()}
        if not self.scenario_id:
            self.scenario_id = (f"M{M}-{'corr' if self.correlated_u else 'uncorr'}-{self.cluster_method}"
                                f"-C{self.C}-{OUTCOME_KEYS.get((self.outcome, self.health), self.outcome)}")
        self.validate()

    def validate(self):
        M, p = self.M, self.cov_mean.size
        if self.S < 1 or self.I < 2:
            raise ConfigError("need S >= 1 datasets and I >= 2 individuals")
        if self.C < 2:
            raise ConfigError("need C >= 2 clusters")
        if self.cluster_method not in ("kmeans", "gmm"):
            raise ConfigError(f"unknown cluster method {self.cluster_method!r}")
        if (self.outcome, self.health) not in OUTCOME_KEYS:
            raise ConfigError(f"unsupported outcome/health combination {self.outcome!r}/{self.health!r}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")
        for name in ("lam", "beta0", "sigma2_u", "sigma2_eps"):
            if getattr(self, name).shape != (M,):
                raise ConfigError(f"{name} must have length M={M}")
        if np.any(self.lam <= 0):
            raise ConfigError("Box-Cox lambdas must be positive")
        if np.any(self.sigma2_u < 0) or np.any(self.sigma2_eps < 0):
            raise ConfigError("variances must be non-negative")
        if self.beta.shape != (M, p):
            raise ConfigError(f"beta must be (M, p) = ({M}, {p})")
        if self.cov_cov.shape != (p, p) or self.u_corr.shape != (M, M):
            raise ConfigError("covariance tables have inconsistent dimensions")
        if abs(sum(self.t_distribution.values()) - 1.0) > 1e-9:
            raise ConfigError("T-distribution proportions must sum to 1")
        if min(self.t_distribution) < 1:
            raise ConfigError("report-day counts must be >= 1")
        health = self.health_a if self.outcome == "A" else self.health_b
        if health is None:
            raise ConfigError(f"no health-model coefficients for outcome {self.outcome} with M={M}")
        if len(health["alpha_y"]) != M or len(health["alpha_x"]) != p:
            raise ConfigError("health-model coefficients do not match M and p")
        if any(d not in (2, 3, 4) for d in self.simex_degrees):
            raise ConfigError("SIMEX degrees must be in {2, 3, 4}")

    @property
    def data_key(self):
        """Key of the data-generating process; scenarios sharing it share datasets."""
        return stable_id(json.dumps({
            "I": self.I, "M": self.M, "corr": self.correlated_u,
            "t": sorted(self.t_distribution.items()), "gs": self.gold_standard_days,
            "truth": self.truth_days,
            "tables": [getattr(self, n).tolist() for n in
                       ("lam", "beta0", "beta", "sigma2_u", "sigma2_eps", "cov_mean", "cov_cov", "u_corr")],
            "health": [self.health_a, self.health_b],
        }, sort_keys=True))

    @property
    def outcome_key(self):
        return OUTCOME_KEYS[(self.outcome, self.health)]

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else (list(v) if isinstance(v, tuple) else v)
        return out

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class SimpleSettingConfig:
    """Grid of simple-setting cells (one exposure, two days, cut-off at zero)."""

    scenario_id: str = "simple"
    S: int = 1000
    I_values: tuple = (200, 1000)
    sigma2_u: tuple = (0.2, 1.0, 5.0)
    sigma2_eps: tuple = (0.2, 1.0, 5.0)
    sigma2_eH: tuple = (0.2, 1.0, 5.0)
    cells: list | None = None          # explicit (I, sigma2_eH, sigma2_eps, sigma2_u) tuples
    blup_modes: tuple = ("standard", "between")
    methods: tuple = ("naive", "rc", "simex", "mi")
    simex_L: int = 300
    simex_degree: int = 2
    zeta_grid: tuple = DEFAULT_ZETA
    mi_L: int = 300
    seed: int = 0

    def __post_init__(self):
        for name in ("I_values", "sigma2_u", "sigma2_eps", "sigma2_eH", "blup_modes", "methods", "zeta_grid"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.cells is not None:
            self.cells = [tuple(float(v) if k else int(v) for k, v in enumerate(c)) for c in self.cells]
        if self.S < 1:
            raise ConfigError("need S >= 1")
        unknown = set(self.methods) - {"naive", "rc", "simex", "mi"}
        if unknown:
            raise ConfigError(f"unknown simple-setting methods {sorted(unknown)}")

    def grid(self):
        if self.cells is not None:
            return list(self.cells)
        return [(I, eh, e, u) for I in self.I_values for eh in self.sigma2_eH
                for e in self.sigma2_eps for u in self.sigma2_u]

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("type", None)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown simple-setting keys {sorted(unknown)}")
        return cls(**d)


def load_config(source):
    """Parse a JSON config (path, file object or dict).

    Returns a list of :class:`ScenarioConfig` or a single
    :class:`SimpleSettingConfig`. A main-study document is either one
    scenario, ``{"scenarios": [...]}``, or ``{"defaults": {...}, "grid":
    {key: [values]}}`` expanded as a Cartesian product.
    """
    if isinstance(source, dict):
        doc = source
    elif hasattr(source, "read"):
        doc = json.load(source)
    else:
        with open(source, encoding="utf-8") as fh:
            doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("type") == "simple":
        return SimpleSettingConfig.from_dict(doc)
    defaults = dict(doc.get("defaults", {}))
    if "grid" in doc:
        keys = list(doc["grid"])
        combos = itertools.product(*(doc["grid"][k] for k in keys))
        items = [{**defaults, **dict(zip(keys, c))} for c in combos]
    elif "scenarios" in doc:
        items = [{**defaults, **s} for s in doc["scenarios"]]
    else:
        items = [{k: v for k, v in doc.items() if k != "type"}]
    configs = [ScenarioConfig.from_dict(item) for item in items]
    ids = [c.scenario_id for c in configs]
    if len(set(ids)) != len(ids):
        raise ConfigError("scenario ids must be unique")
    return configs


# data generation -------------------------------------------------------------

def day_counts(I, distribution):
    """Deterministic number of individuals per T (largest-remainder rounding)."""
    ts = sorted(distribution)
    raw = np.array([distribution[t] * I for t in ts])
    counts = np.floor(raw).astype(int)
    remainder = I - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:remainder]] += 1
    return dict(zip(ts, counts.tolist()))


def dichotomise(h):
    """1 for the ``I - ceil(0.9 I)`` largest values, ties broken by position."""
    h = np.asarray(h)
    I = h.size
    n_cases = I - math.ceil(0.9 * I - 1e-9)
    out = np.zeros(I)
    if n_cases:
        out[np.argsort(h, kind="stable")[I - n_cases:]] = 1.0
    return out


@dataclass
class SimulatedDataset:
    panel: ExposurePanel            # reports and covariates, no outcome attached
    outcomes: dict                  # "A", "A-cat", "B", "B-cat"
    truth: np.ndarray               # (I, M) true usual exposure
    gold_standard: dict             # days -> (I, M) mean of that many extra days
    n_imputed: np.ndarray           # (M,) untransformable values replaced
    index: int = 0

    def panel_for(self, outcome_key):
        return self.panel.with_outcome(self.outcomes[outcome_key])


def _back_transform(z, lam):
    y = np.empty_like(z)
    for m in range(z.shape[-1]):
        y[..., m] = boxcox.backward(z[..., m], lam[m])
    return y


def generate_dataset(config, dataset_index):
    """Simulate one dataset of the main study."""
    cfg, s = config, int(dataset_index)
    key = cfg.data_key
    rng = lambda block: substream(cfg.seed, STAGE["generate"], key, s, block)
    I, M = cfg.I, cfg.M

    counts = day_counts(I, cfg.t_distribution)
    T = np.concatenate([np.full(n, t) for t, n in counts.items()])
    T = T[rng(_T).permutation(I)]

    X = rng(_X).multivariate_normal(cfg.cov_mean, cfg.cov_cov, size=I, method="cholesky")
    X[:, -1] = (X[:, -1] > parameters.DICHOTOMISE_AT).astype(float)

    sd_u = np.sqrt(cfg.sigma2_u)
    g_u = rng(_U)
    if cfg.correlated_u:
        u = g_u.multivariate_normal(np.zeros(M), cfg.u_corr * np.outer(sd_u, sd_u), size=I, method="eigh")
    else:
        u = g_u.standard_normal((I, M)) * sd_u
    mean_g = cfg.beta0 + X @ cfg.beta.T + u            # (I, M) transformed-scale individual mean
    sd_e = np.sqrt(cfg.sigma2_eps)

    subject = np.repeat(np.arange(I), T)
    z_rep = mean_g[subject] + rng(_REPORTS).standard_normal((subject.size, M)) * sd_e
    g_gs = rng(_GS)
    z_gs = {d: mean_g[:, None, :] + g_gs.standard_normal((I, d, M)) * sd_e for d in cfg.gold_standard_days}
    z_truth = mean_g[:, None, :] + rng(_TRUTH).standard_normal((I, cfg.truth_days, M)) * sd_e

    blocks = [_back_transform(z_rep, cfg.lam)]
    blocks += [_back_transform(z_gs[d], cfg.lam) for d in cfg.gold_standard_days]
    blocks.append(_back_transform(z_truth, cfg.lam))
    n_imputed = _impute_untransformable(blocks, rng(_IMPUTE), M)
    reports = blocks[0]
    gold = {d: b.mean(axis=1) for d, b in zip(cfg.gold_standard_days, blocks[1:-1])}
    truth = blocks[-1].mean(axis=1)

    panel = ExposurePanel(T=T, reports=reports, covariates=X,
                          exposure_names=parameters.COMPONENTS[:M] if M <= 9 else (),
                          covariate_names=parameters.COVARIATES)
    outcomes = health_outcomes(cfg, X, truth, panel.individual_means(), rng(_OUTCOME))
    if n_imputed.any():
        logger.info("dataset %d: imputed %s untransformable daily values per component", s, n_imputed.tolist())
    return SimulatedDataset(panel=panel, outcomes=outcomes, truth=truth, gold_standard=gold,
                            n_imputed=n_imputed, index=s)


def health_outcomes(config, X, truth, ybar, rng):
    """Continuous outcomes A and B plus their dichotomised versions.

    A depends on the true usual intake, B additionally on the individual
    means of the reports. The two noise vectors are drawn in that order.
    """
    I = X.shape[0]
    noise = rng.standard_normal((2, I))
    outcomes = {}
    ha, hb = config.health_a, config.health_b
    if ha is not None:
        outcomes["A"] = (ha["alpha0"] + X @ np.asarray(ha["alpha_x"]) + truth @ np.asarray(ha["alpha_y"])
                         + ha["sigma_e"] * noise[0])
    if hb is not None:
        outcomes["B"] = (hb["alpha0"] + X @ np.asarray(hb["alpha_x"]) + truth @ np.asarray(hb["alpha_y"])
                         + ybar @ np.asarray(hb["alpha_ybar"]) + hb["sigma_e"] * noise[1])
    for k in list(outcomes):
        outcomes[k + "-cat"] = dichotomise(outcomes[k])
    return outcomes


def _impute_untransformable(blocks, rng, M):
    """Replace NaNs by Uniform[min, 5% quantile] of the component's valid values."""
    n = np.zeros(M, dtype=int)
    for m in range(M):
        cols = [b[..., m] for b in blocks]
        bad = [np.isnan(c) for c in cols]
        n_bad = sum(int(b.sum()) for b in bad)
        if not n_bad:
            continue
        valid = np.concatenate([c[~b].ravel() for c, b in zip(cols, bad)])
        lo, q5 = valid.min(), np.quantile(valid, 0.05)
        for block, c, b in zip(blocks, cols, bad):
            if b.any():
                block[..., m][b] = rng.uniform(lo, q5, size=int(b.sum()))
        n[m] = n_bad
    return n


# evaluation --------------------------------------------------------------------

@dataclass
class MethodRecord:
    method: str
    failed: bool
    MR: float = np.nan
    aRI: float = np.nan
    delta_bar: float = np.nan
    delta_max: float = np.nan
    delta_rel: float = np.nan
    error: str = ""


def reference_contrasts(result, panel, truth, health):
    """Contrasts obtained by classifying the true exposures with the method's classifier.

    Clusters that receive no true exposure have no reference effect, so
    contrasts involving them are NaN.
    """
    labels = classify_many(result.cluster_model, truth)
    try:
        ref = fit_health_occupied(health, panel.outcome, labels, panel.covariates, result.cluster_model.C)
    except ConvergenceError as exc:
        raise MethodFailure(str(exc)) from exc
    return labels, ref


def evaluate(result, panel, truth, health, tag=None):
    tag = tag or result.tag
    if result.failed:
        return MethodRecord(tag, True, error=result.error)
    try:
        labels_true, ref = reference_contrasts(result, panel, truth, health)
    except MethodFailure as exc:
        return MethodRecord(tag, True, error=f"reference: {exc}")
    d, dmax, drel, _ = dataset_bias(result.contrasts, ref)
    return MethodRecord(tag, False, MR=misclassification_rate(result.labels, labels_true),
                        aRI=adjusted_rand_index(result.labels, labels_true),
                        delta_bar=d, delta_max=dmax, delta_rel=drel)


def _safe(method, fn, degree=None):
    try:
        return fn()
    except MethodFailure as exc:
        return CorrectionResult.failure(method, exc, degree=degree)


def run_dataset(config, dataset_index, dataset=None):
    """All configured methods on one dataset; returns a list of MethodRecords."""
    cfg = config
    data = generate_dataset(cfg, dataset_index) if dataset is None else dataset
    panel = data.panel_for(cfg.outcome_key)
    seed = child_seed(cfg.seed, stable_id(cfg.scenario_id), dataset_index)
    common = dict(C=cfg.C, cluster_method=cfg.cluster_method, health=cfg.health, seed=seed)
    records = []

    error_fit = None
    needs_fit = {"rc", "simex", "mi_null"} & set(cfg.methods)
    if needs_fit:
        try:
            error_fit = fit_error_model(panel, include_outcome=False)
        except (ConvergenceError, MethodFailure) as exc:
            error_fit = exc

    def with_fit(method, fn, degree=None):
        if isinstance(error_fit, Exception):
            return CorrectionResult.failure(method, error_fit, degree=degree)
        return _safe(method, fn, degree)

    naive = _safe("naive", lambda: naive_3sa(panel, **common))
    for method in cfg.methods:
        if method == "naive":
            records.append(evaluate(naive, panel, data.truth, cfg.health))
        elif method == "rc":
            res = with_fit("rc", lambda: rc_3sa(panel, **common, error_fit=error_fit, blup_mode=cfg.blup_mode))
            records.append(evaluate(res, panel, data.truth, cfg.health))
        elif method == "simex":
            sc = SimexConfig(zeta_grid=cfg.zeta_grid, L=cfg.simex_L, degree=cfg.simex_degrees[0])
            if naive.failed:
                pts = naive
            else:
                pts = with_fit("simex", lambda: simex_points(panel, config=sc, error_fit=error_fit,
                                                             naive=naive, **common))
            for deg in cfg.simex_degrees:
                if isinstance(pts, CorrectionResult):
                    res = CorrectionResult.failure("simex", RuntimeError(pts.error), degree=deg)
                else:
                    res = simex_from_points(pts, deg, cfg.health)
                records.append(evaluate(res, panel, data.truth, cfg.health, SIMEX_TAGS[deg]))
        elif method in ("mi", "mi_null"):
            include = method == "mi"
            fit = None if include else error_fit

            def run_mi():
                return mi_3sa(panel, L=cfg.mi_L, include_outcome=include, error_fit=fit,
                              blup_mode=cfg.blup_mode, **common)
            res = _safe(method, run_mi) if include else with_fit(method, run_mi)
            records.append(evaluate(res, panel, data.truth, cfg.health))
        elif method in ("gs7", "gs28"):
            days = int(method[2:])
            if days not in data.gold_standard:
                raise ConfigError(f"{method} requested but {days} gold-standard days not simulated")
            res = _safe(method, lambda: three_stage(data.gold_standard[days], panel, method=method, **common))
            records.append(evaluate(res, panel, data.truth, cfg.health))
    return records


def aggregate(config, per_dataset):
    """Scenario rows from per-dataset record lists (sorted by dataset index)."""
    tags = []
    for recs in per_dataset:
        for r in recs:
            if r.method not in tags:
                tags.append(r.method)
    rows = []
    for tag in tags:
        recs = [r for recs in per_dataset for r in recs if r.method == tag]
        ok = [r for r in recs if not r.failed]
        rel = np.array([r.delta_rel for r in ok if not np.isnan(r.delta_rel)])
        mean = lambda a: float(np.mean(a)) if len(a) else float("nan")
        rows.append({
            "scenario_id": config.scenario_id, "method": tag, "C": config.C, "M": config.M,
            "cluster_method": config.cluster_method, "corr_u": int(config.correlated_u),
            "outcome": config.outcome_key,
            "MR": mean([r.MR for r in ok]), "aRI": mean([r.aRI for r in ok]),
            "mean_abs_bias": mean([r.delta_bar for r in ok]),
            "max_abs_bias": mean([r.delta_max for r in ok]),
            "med_rel_bias": lower_median(rel) if rel.size else float("nan"),
            "n_failed": len(recs) - len(ok),
        })
    return rows


def _dataset_task(args):
    config, s = args
    with threadpool_limits(1):
        return run_dataset(config, s)


def _map(fn, tasks, workers):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=1))


def run_scenario(config, workers=1):
    """Simulate ``config.S`` datasets and aggregate every method's measures."""
    results = _map(_dataset_task, [(config, s) for s in range(config.S)], workers)
    return aggregate(config, results)


def run_scenarios(configs, workers=1):
    """Run several scenarios through one worker pool; rows keep config order."""
    tasks = [(c, s) for c in configs for s in range(c.S)]
    results = _map(_dataset_task, tasks, workers)
    rows, pos = [], 0
    for c in configs:
        rows += aggregate(c, results[pos:pos + c.S])
        pos += c.S
    return rows


# simple setting ----------------------------------------------------------------

def simple_dataset(I, sigma2_u, sigma2_eps, sigma2_eH, rng):
    u = rng.normal(0.0, math.sqrt(sigma2_u), I)
    h = u + rng.normal(0.0, math.sqrt(sigma2_eH), I)
    reports = u[:, None] + rng.normal(0.0, math.sqrt(sigma2_eps), (I, 2))
    panel = ExposurePanel(T=np.full(I, 2), reports=reports.reshape(-1, 1), outcome=h)
    return panel, u


def _fit_or_error(panel, include_outcome):
    try:
        return fit_error_model(panel, include_outcome=include_outcome, lam=None)
    except (ConvergenceError, MethodFailure, ValueError) as exc:
        return exc


def _needs_fit(method, fit, fn):
    if isinstance(fit, Exception):
        return CorrectionResult.failure(method, fit)
    return _safe(method, fn)


def _simple_task(args):
    config, cell, s = args
    I, s2eh, s2e, s2u = cell
    cell_key = stable_id(f"{I}|{s2eh!r}|{s2e!r}|{s2u!r}")
    panel, u = simple_dataset(I, s2u, s2e, s2eh, substream(config.seed, STAGE["generate"], cell_key, s))
    K = fixed_cutoff_model(0.0)
    seed = child_seed(config.seed, cell_key, s)
    common = dict(C=2, health="linear", seed=seed, classifier=K)
    methods = config.methods
    with threadpool_limits(1):
        ref = three_stage(u[:, None], panel, method="reference", **common)
        alpha = ref.contrasts.values[0]

        def rel(res):
            return np.nan if res.failed else abs(res.contrasts.values[0] - alpha) / abs(alpha)

        fit_em = _fit_or_error(panel, False)
        fit_mi = _fit_or_error(panel, True) if "mi" in methods else None
        shared = {}
        if "naive" in methods:
            shared["naive"] = rel(_safe("naive", lambda: naive_3sa(panel, **common)))
        if "simex" in methods:
            sc = SimexConfig(zeta_grid=config.zeta_grid, L=config.simex_L, degree=config.simex_degree)
            shared["simex"] = rel(_needs_fit("simex", fit_em, lambda: simex_from_points(
                simex_points(panel, config=sc, error_fit=fit_em, **common), sc.degree, "linear")))
        out = {}
        for mode in config.blup_modes:
            row = dict(shared)
            if "rc" in methods:
                row["rc"] = rel(_needs_fit("rc", fit_em, lambda: rc_3sa(
                    panel, error_fit=fit_em, blup_mode=mode, **common)))
            if "mi" in methods:
                row["mi"] = rel(_needs_fit("mi", fit_mi, lambda: mi_3sa(
                    panel, L=config.mi_L, error_fit=fit_mi, blup_mode=mode, **common)))
            out[mode] = row
    return out


def run_simple_setting(config, workers=1):
    """Mean relative bias of the contrast per cell, method and BLUP mode."""
    grid = config.grid()
    tasks = [(config, cell, s) for cell in grid for s in range(config.S)]
    results = _map(_simple_task, tasks, workers)
    rows, pos = [], 0
    for cell in grid:
        chunk = results[pos:pos + config.S]
        pos += config.S
        I, s2eh, s2e, s2u = cell
        for mode in config.blup_modes:
            for method in config.methods:
                vals = np.array([r[mode][method] for r in chunk])
                ok = vals[~np.isnan(vals)]
                rows.append({
                    "scenario_id": config.scenario_id, "I": I, "sigma2_eH": s2eh, "sigma2_eps": s2e,
                    "sigma2_u": s2u, "blup_mode": mode, "method": method,
                    "rel_bias": float(ok.mean()) if ok.size else float("nan"),
                    "n_failed": int(vals.size - ok.size),
                })
    return rows


def simple_table(rows, blup_mode="standard"):
    """Index simple-setting rows as {(I, s2eH, s2eps, s2u): {method: rel_bias}}."""
    table = {}
    for r in rows:
        if r["blup_mode"] == blup_mode:
            table.setdefault((r["I"], r["sigma2_eH"], r["sigma2_eps"], r["sigma2_u"]), {})[r["method"]] = r["rel_bias"]
    return table


def write_csv(rows, fh, columns):
    """Comma-separated, header row, shortest round-trip float formatting."""
    writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


def rows_to_csv(rows, columns=CSV_COLUMNS):
    buf = io.StringIO()
    write_csv(rows, buf, columns)
    return buf.getvalue()


__all__ = [
    "ScenarioConfig", "SimpleSettingConfig", "SimulatedDataset", "MethodRecord", "ConfigError",
    "load_config", "generate_dataset", "health_outcomes", "run_dataset", "run_scenario", "run_scenarios",
    "run_simple_setting", "simple_table", "day_counts", "dichotomise", "aggregate", "evaluate",
    "reference_contrasts", "write_csv", "rows_to_csv", "CSV_COLUMNS", "SIMPLE_COLUMNS",
]
