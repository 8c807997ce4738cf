"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line (collected in the terminal
summary). The statistical runs are session fixtures so that criteria
sharing a scenario share its datasets. ``MECLUSTER_FULLSCALE=1`` adds
the full-scale run (S=1000, I=1500) with halved tolerances;
``MECLUSTER_WORKERS`` sets the process count (default: all CPUs).
"""

from __future__ import annotations

import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mecluster.simulation import ScenarioConfig, SimpleSettingConfig, run_scenario, run_simple_setting, simple_table

from .conftest import record_criterion

SEED = 2024
WORKERS = int(os.environ.get("MECLUSTER_WORKERS", os.cpu_count() or 1))
FULLSCALE = os.environ.get("MECLUSTER_FULLSCALE") == "1"
TESTS = Path(__file__).resolve().parent

CELL_SM1_LOW = (200, 0.2, 0.2, 0.2)
CELL_SM1_HIGH_U = (200, 0.2, 0.2, 5.0)
CELL_SM2 = (1000, 0.2, 1.0, 1.0)


def check(name, ok, detail):
    record_criterion(name, ok, detail)
    assert ok, f"{name}: {detail}"


def within(value, target, tol):
    return abs(value - target) <= tol


# fixtures ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def simple_rows():
    cfg = SimpleSettingConfig(S=1000, cells=[CELL_SM1_LOW, CELL_SM1_HIGH_U, CELL_SM2], seed=SEED)
    return run_simple_setting(cfg, workers=WORKERS)


def _scenario(cluster_method, methods, S=100, I=500):
    cfg = ScenarioConfig(scenario_id=f"accept-{cluster_method}-S{S}-I{I}", S=S, I=I, M=5, C=3,
                         cluster_method=cluster_method, correlated_u=False, outcome="A", health="linear",
                         seed=SEED, methods=methods)
    return {r["method"]: r for r in run_scenario(cfg, workers=WORKERS)}


@pytest.fixture(scope="session")
def desk_gmm():
    return _scenario("gmm", ("naive", "rc", "mi", "mi_null"))


@pytest.fixture(scope="session")
def desk_kmeans():
    return _scenario("kmeans", ("naive", "simex", "gs7", "gs28"))


def _fmt(values):
    return ", ".join(f"{k}={v:.3f}" for k, v in values.items())


# simple setting ---------------------------------------------------------------------

def _sm1(table):
    low, high = table[CELL_SM1_LOW], table[CELL_SM1_HIGH_U]
    ok = (within(low["naive"], 0.18, 0.04) and within(low["rc"], 0.18, 0.04)
          and within(low["simex"], 0.11, 0.04) and within(low["mi"], 0.25, 0.05)
          and all(v <= 0.03 for v in high.values()))
    return ok, f"low-u cell [{_fmt(low)}]; high-u cell [{_fmt(high)}]"


def test_simple_setting_sm1(simple_rows):
    results = {mode: _sm1(simple_table(simple_rows, mode)) for mode in ("standard", "between")}
    matching = [mode for mode, (ok, _) in results.items() if ok]
    for mode, (ok, detail) in results.items():
        record_criterion(f"SM1 simple setting, I=200 (BLUP {mode})", ok, detail, informational=True)
    check("SM1 simple setting, I=200", bool(matching), f"matching BLUP mode(s): {matching or 'none'}")


def test_simple_setting_sm2(simple_rows):
    results = {}
    for mode in ("standard", "between"):
        cell = simple_table(simple_rows, mode)[CELL_SM2]
        ok = within(cell["simex"], 0.04, 0.03) and within(cell["naive"], 0.18, 0.03) and within(cell["rc"], 0.18, 0.03)
        results[mode] = ok
        record_criterion(f"SM2 simple setting, I=1000 (BLUP {mode})", ok, _fmt(cell), informational=True)
    matching = [m for m, ok in results.items() if ok]
    check("SM2 simple setting, I=1000", bool(matching), f"matching BLUP mode(s): {matching or 'none'}")


# analytic limits --------------------------------------------------------------------

def test_corrective_mean_limits():
    from mecluster.correction import solve_corrective_mu

    zeta, s2 = 1.5, 0.8
    mu_one = solve_corrective_mu(3.0, 2.0, 1.0, zeta, s2)
    mu_zero = solve_corrective_mu(3.0, 1.1, 1e-4, zeta, s2)
    rel = abs(mu_zero - (-zeta * s2 / 2)) / (zeta * s2 / 2)
    check("corrective-mean analytic limits", abs(mu_one) < 1e-10 and rel < 1e-6,
          f"mu(lambda=1)={mu_one:.3g}, relative error at lambda=1e-4 {rel:.3g}")


# desk-scale main study ---------------------------------------------------------------

def test_desk_gmm_med_rel_bias(desk_gmm):
    med = {m: desk_gmm[m]["med_rel_bias"] for m in ("naive", "rc", "mi", "mi_null")}
    ordering = med["mi"] < med["rc"] < med["naive"]
    ok = ordering and within(med["mi"], 0.68, 0.15) and within(med["naive"], 1.16, 0.2)
    detail = (f"{_fmt(med)}; ordering MI<RC<naive {'holds' if ordering else 'violated'}; "
              f"naive failed {desk_gmm['naive']['n_failed']}; mean abs bias "
              + _fmt({m: desk_gmm[m]["mean_abs_bias"] for m in med}))
    check("desk GMM C=3 med rel bias", ok, detail)


def test_desk_gold_standard_monotonicity(desk_kmeans):
    mr = {m: desk_kmeans[m]["MR"] for m in ("gs28", "gs7", "naive")}
    check("desk k-means gold-standard MR ordering", mr["gs28"] < mr["gs7"] < mr["naive"], _fmt(mr))


def test_desk_simex_degree_ordering(desk_kmeans):
    d = {m: desk_kmeans[m]["mean_abs_bias"] for m in ("simex_q", "simex_c", "simex_q4")}
    check("desk k-means SIMEX mean abs bias Q<C<Q4", d["simex_q"] < d["simex_c"] < d["simex_q4"], _fmt(d))


# property suites ----------------------------------------------------------------------

PROPERTY_SUITES = {
    "Box-Cox round trip": "test_boxcox.py::test_round_trip",
    "Lloyd WCSS monotonicity": "test_cluster.py::test_lloyd_wcss_never_increases test_cluster.py::test_lloyd_wcss_monotone_property",
    "EM log-likelihood monotonicity": "test_cluster.py::test_em_loglik_never_decreases test_cluster.py::test_gmm_trace_monotone_from_fit",
    "OLS orthogonality and 6-point example": "test_health_model.py::test_linear_residuals_orthogonal_to_design test_health_model.py::test_six_point_hand_example",
    "logistic 2x2 log-odds": "test_health_model.py::test_logistic_two_by_two_log_odds",
    "aRI identical and crossed examples": "test_measures.py::test_ari_examples",
    "contrast identity": "test_health_model.py::test_contrast_identity_and_antisymmetry test_health_model.py::test_contrast_expansion_c3",
    "NCI variance reduction end to end": "test_nci.py::test_nci_variance_reduction_end_to_end",
    "simulate output identical across worker counts": "test_simulation.py::test_scenario_output_independent_of_worker_count test_cli.py::test_smoke_simulate_is_fast_and_worker_independent",
}


@pytest.mark.parametrize("suite", list(PROPERTY_SUITES))
def test_property_suite(suite):
    ids = [str(TESTS / t) for t in PROPERTY_SUITES[suite].split()]
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *ids],
                          capture_output=True, text=True, cwd=TESTS.parent)
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    check(f"property suite: {suite}", proc.returncode == 0, summary)


# opt-in full scale ---------------------------------------------------------------------

fullscale = pytest.mark.skipif(not FULLSCALE, reason="set MECLUSTER_FULLSCALE=1 for the full-scale run")


@pytest.mark.fullscale
@fullscale
def test_fullscale_gmm_med_rel_bias():
    res = _scenario("gmm", ("naive", "rc", "mi", "mi_null"), S=1000, I=1500)
    med = {m: res[m]["med_rel_bias"] for m in ("naive", "rc", "mi", "mi_null")}
    ok = (med["mi"] < med["rc"] < med["naive"] and within(med["mi"], 0.68, 0.075)
          and within(med["naive"], 1.16, 0.1))
    check("full-scale GMM C=3 med rel bias", ok, _fmt(med))


@pytest.mark.fullscale
@fullscale
def test_fullscale_kmeans_orderings():
    res = _scenario("kmeans", ("naive", "simex", "gs7", "gs28"), S=1000, I=1500)
    mr = [res[m]["MR"] for m in ("gs28", "gs7", "naive")]
    d = [res[m]["mean_abs_bias"] for m in ("simex_q", "simex_c", "simex_q4")]
    check("full-scale k-means MR and SIMEX orderings", mr[0] < mr[1] < mr[2] and d[0] < d[1] < d[2],
          f"MR gs28/gs7/naive={np.round(mr, 2).tolist()}, SIMEX Q/C/Q4={np.round(d, 3).tolist()}")
