"""Closed-form variance, covariance and correlation of per-cohort DiD estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import ValidationError
from .timing import time_factor


@dataclass(frozen=True)
class CohortCounts:
    """Counts describing one cohort: treated size and per-control sizes."""

    unit: str
    n_treated: int
    control_units: tuple
    n_control: tuple
    T_pre: int
    T_post: int
    policy_occasion: int = 0

    @property
    def N_ctrl(self):
        return sum(self.n_control)


@dataclass(frozen=True)
class PairCovariance:
    """Covariance of two cohort estimates with its per-unit breakdown.

    ``value == prefactor * sum(c for _, c in contributions)`` where
    ``prefactor = time_factor / (N_gamma_ctrl * N_nu_ctrl)``.
    """

    value: float
    time_factor: float
    prefactor: float
    contributions: tuple  # (unit, contribution) pairs


def _unit_term(n, p):
    # n(1 - rho) + n(n - 1)(phi - psi), times sigma2
    return p.sigma2 * (n * (1.0 - p.rho) + n * (n - 1) * p.excess)


def variance_terms(counts, corr):
    """Treated and control parts of the variance (both already scaled).

    Returns
    -------
    treated, control : float
    """
    if isinstance(counts, CohortCounts):
        c = counts
    else:
        c = counts.cohort_gamma()
    if c.n_treated < 1 or c.N_ctrl < 1:
        raise ValidationError(f"cohort {c.unit!r} needs treated and control members")
    scale = (c.T_pre + c.T_post) / (c.T_pre * c.T_post)
    tr = _unit_term(c.n_treated, corr.params(c.unit)) / c.n_treated ** 2
    N = c.N_ctrl
    ctl = math.fsum(_unit_term(n, corr.params(z)) for z, n in zip(c.control_units, c.n_control))
    return scale * tr, scale * ctl / N ** 2


def att_variance(counts, corr):
    """Variance of one cohort's plug-in DiD estimate.

    Parameters
    ----------
    counts : CohortCounts or OverlapCounts
        For an ``OverlapCounts`` the gamma cohort is used.
    corr : CorrelationStructure

    Returns
    -------
    float
    """
    tr, ctl = variance_terms(counts, corr)
    return tr + ctl


def att_covariance(pair, corr):
    """Covariance of two cohorts' estimates induced by shared controls.

    Parameters
    ----------
    pair : OverlapCounts
    corr : CorrelationStructure

    Returns
    -------
    PairCovariance
    """
    f = time_factor(pair.T_pre, pair.T_post, pair.delta)
    Ng, Nn = pair.N_gamma_ctrl, pair.N_nu_ctrl
    if Ng < 1 or Nn < 1:
        raise ValidationError("both cohorts need control members")
    contrib = []
    for z, a, b, s in zip(pair.control_units, pair.n_gamma, pair.n_nu, pair.n_shared):
        p = corr.params(z)
        d = p.excess
        contrib.append((z, p.sigma2 * (a * b * d + s * ((1.0 - p.rho) - d))))
    pref = f / (Ng * Nn)
    value = pref * math.fsum(c for _, c in contrib) if f != 0.0 else 0.0
    return PairCovariance(value, f, pref, tuple(contrib))


def att_correlation(pair, corr):
    """Correlation of two cohorts' estimates (covariance over both SDs)."""
    w = att_covariance(pair, corr).value
    if w == 0.0:
        return 0.0
    va = att_variance(pair.cohort_gamma(), corr)
    vb = att_variance(pair.cohort_nu(), corr)
    if not (va > 0 and vb > 0):
        raise ValidationError(f"correlation undefined: variances {va}, {vb}")
    return w / math.sqrt(va * vb)
