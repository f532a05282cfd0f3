"""Moment estimators of (rho, phi, psi, sigma2) from panel data.

Outcomes are residualized on occasion dummies and the treatment indicator.
Residual cross-products are then summed within four disjoint pair classes:

0. same observation
1. same person, different occasions
2. different persons in one unit, same occasion
3. different persons in one unit, different occasions

Under the block-exchangeable model ``Sigma = sum_j theta_j C_j`` (``C_j`` the
class indicator matrices), the expected class sums are linear in
``theta = sigma2 * (1, rho, phi, psi)`` even after residualization:
``E[r' C_k r] = tr(C_k M Sigma M)`` with ``M`` the residual projector. We
solve that 4x4 system, which removes the downward bias that plain residual
moments suffer when occasion effects absorb part of the unit-by-occasion
variation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError
from .panel import build_cohort
from .simulate.generator import replicate_rng

COMPONENTS = ("sigma2", "rho", "phi", "psi")


@dataclass
class IccEstimate:
    rho: float
    phi: float
    psi: float
    sigma2: float
    n_pairs_used: dict
    feasible: bool = True
    clamped: bool = False
    unavailable: tuple = ()
    resample_meta: Optional[dict] = None
    per_resample: list = field(default_factory=list, repr=False)

    def to_dict(self):
        d = {"rho": _f(self.rho), "phi": _f(self.phi), "psi": _f(self.psi),
             "sigma2": _f(self.sigma2), "n_pairs_used": dict(self.n_pairs_used),
             "feasible": self.feasible, "clamped": self.clamped,
             "unavailable": list(self.unavailable)}
        if self.resample_meta is not None:
            d["resample_meta"] = dict(self.resample_meta)
        return d

    def correlation_structure(self):
        from .blockcov import CorrelationStructure
        return CorrelationStructure.homogeneous(self.rho, self.phi, self.psi, self.sigma2)


def _f(x):
    return None if x is None or not math.isfinite(x) else float(x)


class _Ops:
    """Apply pair-class indicator matrices via group sums."""

    def __init__(self, state, person, occ):
        self.state, self.person = state, person
        self.K = int(occ.max()) + 1 if len(occ) else 1
        self.st = state * self.K + occ
        self.ns, self.npers = int(state.max()) + 1, int(person.max()) + 1
        self.nst = self.ns * self.K

    def _gs(self, codes, size, v):
        return np.bincount(codes, weights=v, minlength=size)[codes]

    def apply(self, k, v):
        if k == 0:
            return v
        ps = self._gs(self.person, self.npers, v)
        if k == 1:
            return ps - v
        sts = self._gs(self.st, self.nst, v)
        if k == 2:
            return sts - v
        ss = self._gs(self.state, self.ns, v)
        return ss - ps - sts + v

    def apply_cols(self, k, X):
        return np.column_stack([self.apply(k, X[:, c]) for c in range(X.shape[1])])


def _observations(panel, cohorts):
    """Unit, person, occasion, outcome and treatment arrays to analyze."""
    if not cohorts:
        units, inds, occ, y = panel.units.astype(str), panel.individuals, panel.occasions, panel.outcomes
    else:
        keep = np.zeros(len(panel), dtype=bool)
        for c in cohorts:
            mem = np.asarray(sorted(set().union(*c.members.values())), dtype=str)
            keep |= (np.isin(panel.individuals, mem)
                     & (panel.occasions >= c.spec.start) & (panel.occasions <= c.spec.end))
        units = panel.units[keep].astype(str)
        inds, occ, y = panel.individuals[keep], panel.occasions[keep], panel.outcomes[keep]
    pol = {u: r.policy_occasion for u, r in panel.unit_roles.items() if r.treated}
    A = np.array([1.0 if (u in pol and t >= pol[u]) else 0.0 for u, t in zip(units, occ)])
    return units, inds, occ, np.asarray(y, dtype=float), A


def estimate_icc(panel, cohorts=None, clamp=False):
    """Estimate (rho, phi, psi) averaged over units, plus sigma2.

    Parameters
    ----------
    panel : PanelDataset
    cohorts : list of Cohort, optional
        Restrict to the person-time of these cohorts (each observation used
        once). Default: the whole panel.
    clamp : bool
        Clip correlations into ``[-1/(T-1), 1)`` and flag it.

    Returns
    -------
    IccEstimate
        Components without any contributing pairs are NaN and listed in
        ``unavailable``.
    """
    units, inds, occ, y, A = _observations(panel, cohorts)
    if len(y) == 0:
        raise ValidationError("no observations to estimate correlations from")
    _, s = np.unique(units, return_inverse=True)
    _, p = np.unique(inds, return_inverse=True)
    occ_ids, t = np.unique(occ, return_inverse=True)
    if len(occ_ids) < 2:
        raise ValidationError("need at least two occasions")
    n_people = np.array([len(np.unique(p[s == k])) for k in range(s.max() + 1)])
    if n_people.min() < 2:
        raise ValidationError("need at least two individuals in every unit")
    ops = _Ops(s, p, t)

    X = np.zeros((len(y), len(occ_ids) + 1))
    X[np.arange(len(y)), t] = 1.0
    X[:, -1] = A
    if not A.any():
        X = X[:, :-1]
    G = np.linalg.pinv(X.T @ X)
    r = y - X @ (G @ (X.T @ y))

    ones = np.ones(len(y))
    n_k = np.array([ones @ ops.apply(k, ones) for k in range(4)])
    S = np.array([r @ ops.apply(k, r) for k in range(4)])
    CX = [ops.apply_cols(k, X) for k in range(4)]
    XCX = [X.T @ c for c in CX]
    Amat = np.empty((4, 4))
    for k in range(4):
        for j in range(4):
            Amat[k, j] = ((n_k[k] if k == j else 0.0)
                          - 2.0 * np.trace(G @ (CX[j].T @ CX[k]))
                          + np.trace(G @ XCX[j] @ G @ XCX[k]))
    avail = [k for k in range(4) if n_k[k] > 0]
    theta = np.full(4, np.nan)
    theta[avail] = np.linalg.solve(Amat[np.ix_(avail, avail)], S[avail])
    sigma2 = float(theta[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        cors = [float(np.float64(theta[k]) / sigma2) if k in avail else math.nan
                for k in (1, 2, 3)]
    T = len(occ_ids)
    lo = -1.0 / (T - 1)
    feasible = sigma2 > 0 and all(lo <= c < 1.0 for c in cors if math.isfinite(c))
    clamped = False
    if clamp:
        new = [min(max(c, lo), np.nextafter(1.0, 0.0)) if math.isfinite(c) else c for c in cors]
        clamped = new != cors
        cors = new
    pairs = {name: int(n_k[k]) for k, name in enumerate(COMPONENTS)}
    unavailable = tuple(COMPONENTS[k] for k in range(4) if n_k[k] == 0)
    return IccEstimate(cors[0], cors[1], cors[2], sigma2, pairs, bool(feasible),
                       clamped, unavailable)


def subsample_balanced(panel, fraction, n_resamples, seed):
    """Draw unit-balanced subsamples of individuals.

    Every unit contributes ``floor(fraction * smallest unit size)``
    individuals, drawn without replacement. Resample ``r`` uses its own
    stream derived from ``seed``, so membership is reproducible.

    Returns
    -------
    list of PanelDataset
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError("fraction must lie in (0, 1]")
    if n_resamples < 1:
        raise ValidationError("n_resamples must be >= 1")
    by_unit = {}
    for ind, u in panel.unit_of.items():
        by_unit.setdefault(u, []).append(ind)
    if not by_unit:
        raise ValidationError("panel has no individuals")
    smallest = min(len(v) for v in by_unit.values())
    quota = int(math.floor(fraction * smallest + 1e-9))
    if quota < 2:
        raise ValidationError(
            f"fraction {fraction} yields {quota} individuals per unit; need at least 2")
    units = sorted(by_unit)
    out = []
    for r in range(n_resamples):
        rng = replicate_rng(seed, r)
        chosen = []
        for u in units:
            pool = sorted(by_unit[u])
            idx = rng.choice(len(pool), size=quota, replace=False)
            chosen.extend(pool[i] for i in sorted(idx))
        out.append(panel.subset(chosen))
    return out


def estimate_icc_resampled(panel, specs, fraction, n_resamples, seed, clamp=False):
    """Average correlation estimates over balanced subsamples.

    Cohorts are rebuilt from ``specs`` inside each subsample. The final
    correlation estimates (not the variance components) are averaged.
    """
    ests = []
    for sub in subsample_balanced(panel, fraction, n_resamples, seed):
        cohorts = [build_cohort(sub, sp) for sp in specs] if specs else None
        ests.append(estimate_icc(sub, cohorts, clamp=clamp))

    def avg(name):
        return float(np.mean([getattr(e, name) for e in ests]))

    pairs = {k: int(np.mean([e.n_pairs_used[k] for e in ests])) for k in COMPONENTS}
    return IccEstimate(avg("rho"), avg("phi"), avg("psi"), avg("sigma2"), pairs,
                       all(e.feasible for e in ests), any(e.clamped for e in ests),
                       tuple(sorted({u for e in ests for u in e.unavailable})),
                       {"n_resamples": n_resamples, "fraction": fraction, "seed": seed},
                       ests)
