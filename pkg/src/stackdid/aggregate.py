"""Pooling per-cohort estimates: inverse-variance and GLS weighting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import ConditioningError, ValidationError

COND_WARN = 1e12


@dataclass(frozen=True)
class EstimateSet:
    """Cohort estimates with their full covariance matrix ``W``.

    ``V`` is the diagonal part of ``W``.
    """

    labels: tuple
    values: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        k = len(vals)
        if W.shape != (k, k):
            raise ValidationError(f"W has shape {W.shape}, expected ({k}, {k})")
        if len(self.labels) != k:
            raise ValidationError("one label per estimate required")
        if not np.all(np.isfinite(vals)) or not np.all(np.isfinite(W)):
            raise ValidationError("estimates and W must be finite")
        if not np.allclose(W, W.T, rtol=1e-12, atol=0.0):
            raise ValidationError("W must be symmetric")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "W", 0.5 * (W + W.T))
        object.__setattr__(self, "labels", tuple(self.labels))

    @classmethod
    def from_estimates(cls, estimates, W):
        return cls(tuple(e.cohort_id for e in estimates),
                   np.array([e.value for e in estimates]), W)

    @property
    def V(self):
        return np.diag(np.diag(self.W))

    def __len__(self):
        return len(self.values)

    def to_dict(self):
        return {"labels": list(self.labels), "values": self.values.tolist(),
                "W": self.W.tolist()}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(tuple(d["labels"]), np.array(d["values"], dtype=float),
                       np.array(d["W"], dtype=float))
        except KeyError as exc:
            raise ValidationError(f"estimate set missing key {exc}") from None


@dataclass(frozen=True)
class PooledResult:
    method: str
    value: float
    variance: float
    weights: tuple
    ci: tuple
    level: float
    warnings: tuple = field(default_factory=tuple)
    shrinkage: float = 0.0
    condition_number: Optional[float] = None

    @property
    def se(self):
        return math.sqrt(self.variance)

    def to_dict(self):
        return {"method": self.method, "value": self.value,
                "variance": self.variance, "se": self.se,
                "weights": list(self.weights), "ci": list(self.ci),
                "level": self.level, "warnings": list(self.warnings),
                "shrinkage": self.shrinkage,
                "condition_number": self.condition_number}


def confidence_interval(value, variance, level=0.95):
    """Normal-theory interval ``value +/- z * sqrt(variance)``.

    Examples
    --------
    >>> lo, hi = confidence_interval(0.0, 1.0, 0.95)
    >>> round(hi, 5)
    1.95996
    """
    if not 0.0 < level < 1.0:
        raise ValidationError(f"level must lie in (0, 1), got {level}")
    if variance < 0:
        raise ValidationError("variance must be nonnegative")
    if variance == 0:
        return (float(value), float(value))
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    h = z * math.sqrt(variance)
    return (float(value - h), float(value + h))


def aggregate_ivw(est, level=0.95):
    """Inverse-variance weighted average, ignoring off-diagonal covariance."""
    v = np.diag(est.W).copy()
    if np.any(v <= 0):
        raise ValidationError("all variances must be positive for IVW pooling")
    prec = 1.0 / v
    total = math.fsum(prec)
    w = prec / total
    value = float(np.dot(w, est.values))
    var = 1.0 / total
    return PooledResult("ivw", value, var, tuple(w.tolist()),
                        confidence_interval(value, var, level), level)


def _smallest_pivot(W):
    _, d, _ = scipy.linalg.ldl(W)
    return float(np.min(np.linalg.eigvalsh(d)))


def aggregate_gls(est, level=0.95, shrinkage=0.0):
    """Generalized least-squares pooling with the full covariance ``W``.

    Parameters
    ----------
    est : EstimateSet
    level : float
        Confidence level of the reported interval.
    shrinkage : float in [0, 1]
        Blend ``W`` toward its diagonal: ``(1 - s) W + s diag(W)``. Off by
        default; a badly conditioned ``W`` is refused instead.

    Returns
    -------
    PooledResult

    Raises
    ------
    ConditioningError
        ``W`` is not positive definite.
    """
    if not 0.0 <= shrinkage <= 1.0:
        raise ValidationError("shrinkage must lie in [0, 1]")
    W = est.W
    if shrinkage:
        W = (1.0 - shrinkage) * W + shrinkage * np.diag(np.diag(W))
    try:
        cf = scipy.linalg.cho_factor(W, lower=True, check_finite=True)
    except np.linalg.LinAlgError:
        piv = _smallest_pivot(W)
        raise ConditioningError(
            f"W is not positive definite (smallest pivot {piv:.6g})", piv) from None
    warn = []
    cond = float(np.linalg.cond(W))
    if not np.isfinite(cond) or cond > COND_WARN:
        warn.append(f"W is ill-conditioned (condition number {cond:.3g})")
    ones = np.ones(len(est))
    u = scipy.linalg.cho_solve(cf, ones)
    denom = math.fsum(u)
    if denom <= 0:
        raise ConditioningError("1' W^-1 1 is not positive", denom)
    w = u / denom
    value = float(np.dot(w, est.values))
    var = 1.0 / denom
    return PooledResult("gls", value, var, tuple(w.tolist()),
                        confidence_interval(value, var, level), level,
                        tuple(warn), float(shrinkage), cond)
