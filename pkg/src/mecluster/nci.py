"""Usual-exposure estimates on the original scale (NCI-type back-transform).

The transformed-scale BLUP ``mu`` is mapped back with a second-order
Taylor expansion of ``E[g^{-1}(mu + eps)]``, eps ~ N(0, s2_eps):

    (lam*mu + 1)**(1/lam) + (1 - lam)/2 * (lam*mu + 1)**(1/lam - 2) * s2_eps
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mixed_model import blup_all

logger = logging.getLogger(__name__)

CLAMP_EPS = 1e-9


@dataclass
class UsualExposureEstimate:
    values: np.ndarray          # (I, M), original scale
    n_clamped: np.ndarray       # (M,) individuals clamped at the transform boundary
    clamped: np.ndarray         # (I, M) bool

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def taylor_backtransform(mu, lam, sigma2_eps):
    """Second-order back-transform of transformed-scale values ``mu``.

    Returns ``(values, clamped_mask)``. Entries with ``lam*mu + 1 <= 0``
    are moved to just inside the boundary and flagged.
    """
    mu = np.asarray(mu, dtype=float)
    if lam is None:
        return mu.copy(), np.zeros(mu.shape, dtype=bool)
    base = lam * mu + 1.0
    clamped = base <= 0
    base = np.where(clamped, lam * CLAMP_EPS, base)
    main = base ** (1.0 / lam)
    corr = 0.5 * (1.0 - lam) * base ** (1.0 / lam - 2.0) * sigma2_eps
    return main + corr, clamped


def estimate_usual(fit, panel, blup_mode="standard"):
    """Estimate each individual's usual exposure for every component."""
    I, M = panel.n_individuals, panel.n_components
    values = np.empty((I, M))
    flags = np.zeros((I, M), dtype=bool)
    for m in range(M):
        c = fit[m]
        mu = blup_all(c, panel, m, mode=blup_mode)
        values[:, m], flags[:, m] = taylor_backtransform(mu, c.lam, c.sigma2_eps)
    n_clamped = flags.sum(axis=0)
    if n_clamped.any():
        logger.info("NCI back-transform clamped %s individuals per component", n_clamped.tolist())
    return UsualExposureEstimate(values=values, n_clamped=n_clamped, clamped=flags)
