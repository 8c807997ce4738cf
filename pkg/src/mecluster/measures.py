"""Classification agreement and contrast-bias measures."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import comb

logger = logging.getLogger(__name__)

ZERO_REF = 1e-12


def misclassification_rate(est, ref):
    """Percentage of individuals whose two labels differ.

    Both labelings must come from the same classification function, so no
    label matching is attempted.
    """
    est, ref = np.asarray(est), np.asarray(ref)
    if est.shape != ref.shape:
        raise ValueError(f"label vectors differ in length: {est.shape} vs {ref.shape}")
    return 100.0 * float(np.mean(est != ref))


def adjusted_rand_index(a, b):
    """Hubert-Arabie adjusted Rand index."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("label vectors differ in length")
    n = a.size
    if n < 2:
        raise ValueError("adjusted Rand index needs at least two elements")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    sum_cells = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    expected = sum_a * sum_b / comb(n, 2)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial (single cluster or all singletons)
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def lower_median(x):
    x = np.sort(np.asarray(x, dtype=float))
    return float(x[(x.size - 1) // 2])


@dataclass
class BiasSummary:
    delta_bar: np.ndarray        # per dataset
    delta_max: np.ndarray
    delta_rel_bar: np.ndarray
    mean_delta: float
    mean_delta_max: float
    median_delta_rel: float
    n_datasets: int
    n_zero_reference: int = 0


def _values(cs):
    return np.asarray(getattr(cs, "values", cs), dtype=float)


def dataset_bias(estimated, reference):
    """(mean abs bias, max abs bias, mean relative abs bias, #zero refs) for one dataset.

    NaN reference entries mark contrasts that are not estimable under the
    reference classification; they are left out of every measure.
    """
    est, ref = _values(estimated), _values(reference)
    if est.shape != ref.shape:
        raise ValueError("estimated and reference contrast sets differ in size")
    est, ref = est[~np.isnan(ref)], ref[~np.isnan(ref)]
    if ref.size == 0:
        raise ValueError("no estimable reference contrast")
    delta = np.abs(ref - est)
    keep = np.abs(ref) > ZERO_REF
    rel = delta[keep] / np.abs(ref[keep])
    rel_bar = float(rel.mean()) if rel.size else np.nan
    return float(delta.mean()), float(delta.max()), rel_bar, int((~keep).sum())


def bias_summary(estimated, reference):
    """Aggregate bias measures over datasets.

    ``estimated`` and ``reference`` are sequences of ContrastSets (or
    arrays); pairs where either side is ``None`` are skipped as failures.
    The relative measure is aggregated with the lower median.
    """
    rows = []
    n_zero = 0
    for e, r in zip(estimated, reference):
        if e is None or r is None:
            continue
        d, dmax, drel, nz = dataset_bias(e, r)
        n_zero += nz
        rows.append((d, dmax, drel))
    if n_zero:
        logger.info("%d reference contrasts within %.0e of zero excluded from relative bias", n_zero, ZERO_REF)
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    rel = arr[:, 2][~np.isnan(arr[:, 2])]
    return BiasSummary(
        delta_bar=arr[:, 0], delta_max=arr[:, 1], delta_rel_bar=arr[:, 2],
        mean_delta=float(arr[:, 0].mean()) if len(arr) else np.nan,
        mean_delta_max=float(arr[:, 1].mean()) if len(arr) else np.nan,
        median_delta_rel=lower_median(rel) if rel.size else np.nan,
        n_datasets=len(arr), n_zero_reference=n_zero,
    )
