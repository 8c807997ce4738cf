from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from mecluster import boxcox
from mecluster.mixed_model import ExposurePanel

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def synthetic_panel(rng, I, T, lam=None, beta0=0.0, sigma2_u=1.0, sigma2_eps=0.25, X=None,
                    beta=None, outcome=None, M=1):
    """Random-intercept panel, back-transformed with ``lam`` (``None`` = identity)."""
    T = np.broadcast_to(np.asarray(T, dtype=int), (I,)).copy()
    beta0 = np.broadcast_to(np.asarray(beta0, dtype=float), (M,))
    mean = np.tile(beta0, (I, 1))
    if X is not None:
        mean = mean + np.asarray(X) @ np.atleast_2d(beta).T
    u = rng.normal(0.0, np.sqrt(sigma2_u), (I, M))
    subject = np.repeat(np.arange(I), T)
    z = (mean + u)[subject] + rng.normal(0.0, np.sqrt(sigma2_eps), (subject.size, M))
    y = z if lam is None else boxcox.inverse(z, lam)
    return ExposurePanel(T=T, reports=y, covariates=X, outcome=outcome), u


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def small_scenario():
    from mecluster.simulation import ScenarioConfig
    return ScenarioConfig(S=2, I=300, M=5, C=3, seed=11, simex_L=20, mi_L=20)


_CRITERIA = []


def record_criterion(name, ok, detail, informational=False):
    """Register one acceptance line; it is echoed live and in the terminal summary."""
    tag = ("pass" if ok else "fail") if informational else ("PASS" if ok else "FAIL")
    line = f"{tag} {name}: {detail}"
    _CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
