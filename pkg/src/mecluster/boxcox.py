"""Box-Cox transform ``g(v) = (v**lam - 1) / lam`` and its inverse.

Only ``lam > 0`` is accepted. Internally the rest of the package also
uses ``lam=None`` to mean "no transformation" (the identity scale used
by the simple simulation setting); the ``forward``/``backward`` helpers
handle that case, the public ``transform``/``inverse`` do not.
"""

from __future__ import annotations

import numpy as np

# boundary slack for inverse(): lam*t + 1 in [-BOUNDARY_TOL, 0] is clamped to 0
BOUNDARY_TOL = 1e-12


class DomainError(ValueError):
    """Non-positive input to the forward transform."""


class UntransformableValue(ValueError):
    """``t < -1/lam``: the inverse transform has no positive real value."""


def _check_lambda(lam):
    lam = float(lam)
    if not lam > 0:
        raise ValueError(f"Box-Cox lambda must be > 0, got {lam!r}")
    return lam


def transform(v, lam):
    """Forward transform of a positive scalar or array."""
    lam = _check_lambda(lam)
    v = np.asarray(v, dtype=float)
    if np.any(~(v > 0)):
        raise DomainError("Box-Cox transform requires strictly positive values")
    out = np.expm1(lam * np.log(v)) / lam
    return float(out) if out.ndim == 0 else out


def inverse(t, lam, errors="raise"):
    """Inverse transform ``(lam*t + 1)**(1/lam)``.

    Parameters
    ----------
    t : float or array
        Values on the transformed scale.
    lam : float
        Box-Cox exponent, > 0.
    errors : {"raise", "nan"}
        What to do with values at or below the boundary ``-1/lam``.
        ``"raise"`` raises :class:`UntransformableValue`; ``"nan"``
        returns NaN at those positions so callers can impute.
    """
    lam = _check_lambda(lam)
    t = np.asarray(t, dtype=float)
    base = lam * t + 1.0
    base = np.where((base < 0) & (base >= -BOUNDARY_TOL), 0.0, base)
    bad = ~(base > 0)
    if np.any(bad) and errors == "raise":
        raise UntransformableValue(
            f"value(s) at or below the inverse Box-Cox boundary -1/lambda = {-1 / lam:.6g}"
        )
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.exp(np.log(np.where(bad, 1.0, base)) / lam)
    out = np.where(bad, np.nan, out)
    return float(out) if out.ndim == 0 else out


def forward(v, lam):
    """Array transform that accepts ``lam=None`` for the identity scale."""
    if lam is None:
        return np.asarray(v, dtype=float)
    return np.asarray(transform(v, lam), dtype=float)


def backward(t, lam):
    """Array inverse that accepts ``lam=None``; untransformable entries become NaN."""
    if lam is None:
        return np.asarray(t, dtype=float)
    return np.asarray(inverse(t, lam, errors="nan"), dtype=float)


def lower_bound(lam):
    """Smallest transformed value with a defined inverse (``-inf`` for identity)."""
    return -np.inf if lam is None else -1.0 / lam


def log_jacobian(v, lam):
    """``(lam - 1) * sum(log v)``; zero on the identity scale."""
    if lam is None:
        return 0.0
    return (lam - 1.0) * float(np.sum(np.log(v)))
