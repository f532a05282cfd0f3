"""Independent reference computations for the closed forms.

Two paths, both deliberately naive:

* :func:`cov_exact_oracle` writes each estimator as a weight vector over
  person-time and evaluates ``a' Sigma b`` with dense matrices.
* :func:`cov_component_sum` splits every cohort mean into disjoint
  person-group x calendar-window pieces and adds up the covariance of every
  pair of pieces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import SizeGuardError, ValidationError
from .structure import build_sigma
from .timing import _pos, time_factor_numerator, window_durations

DENSE_LIMIT = 6000


@dataclass(frozen=True)
class CohortDesign:
    """Who contributes to one cohort estimate, and when.

    ``members`` maps each control unit to integer person labels; persons
    with equal labels in two designs are the same individual.
    """

    policy_occasion: int
    T_pre: int
    T_post: int
    members: Mapping[str, Sequence[int]]
    treated_unit: str = None
    treated_members: Sequence[int] = field(default_factory=tuple)

    @property
    def N_ctrl(self):
        return sum(len(v) for v in self.members.values())

    def weights(self, include_treated):
        """(unit, person, occasion) -> weight of the plug-in estimator."""
        pre = range(self.policy_occasion - self.T_pre, self.policy_occasion)
        post = range(self.policy_occasion, self.policy_occasion + self.T_post)
        out = {}

        def add(unit, persons, scale):
            n = len(persons)
            for i in persons:
                for t in post:
                    out[(unit, i, t)] = scale / (n * self.T_post)
                for t in pre:
                    out[(unit, i, t)] = -scale / (n * self.T_pre)

        if include_treated and self.treated_unit is not None:
            add(self.treated_unit, list(self.treated_members), 1.0)
        N = self.N_ctrl
        for unit, persons in self.members.items():
            pers = list(persons)
            # control means pool over all control persons
            for i in pers:
                for t in post:
                    out[(unit, i, t)] = -1.0 / (N * self.T_post)
                for t in pre:
                    out[(unit, i, t)] = 1.0 / (N * self.T_pre)
        return out


def designs_from_counts(pair, include_treated=False):
    """Materialize two designs realizing the counts in ``pair``.

    Per control unit, persons ``0..s-1`` are shared, then gamma-only, then
    nu-only.
    """
    g_first = pair.gamma_first or pair.delta == 0
    tg, tn = (0, pair.delta) if g_first else (pair.delta, 0)
    mg, mn = {}, {}
    for z, a, b, s in zip(pair.control_units, pair.n_gamma, pair.n_nu, pair.n_shared):
        mg[z] = list(range(s)) + list(range(s, a))
        mn[z] = list(range(s)) + list(range(a, a + b - s))
    kw = {}
    if include_treated:
        kw = dict(treated_unit="__tx_" + str(pair.gamma),
                  treated_members=list(range(pair.n_treated_gamma)))
    A = CohortDesign(tg, pair.T_pre, pair.T_post, mg, **kw)
    if include_treated:
        kw = dict(treated_unit="__tx_" + str(pair.nu),
                  treated_members=list(range(pair.n_treated_nu)))
    B = CohortDesign(tn, pair.T_pre, pair.T_post, mn, **kw)
    return A, B


def cov_exact_oracle(designA, designB, corr, include_treated=False,
                     limit=DENSE_LIMIT):
    """Covariance of two plug-in estimators by dense ``a' Sigma b``.

    Parameters
    ----------
    designA, designB : CohortDesign
    corr : CorrelationStructure
    include_treated : bool
        Also weight treated person-time (needed for full variances).
    limit : int
        Largest per-unit person-time block allowed.

    Returns
    -------
    float
    """
    wa = designA.weights(include_treated)
    wb = designB.weights(include_treated)
    units = sorted({k[0] for k in wa} | {k[0] for k in wb})
    total = []
    for u in units:
        keys = [k for k in set(wa) | set(wb) if k[0] == u]
        persons = sorted({k[1] for k in keys})
        times = [k[2] for k in keys]
        t0, t1 = min(times), max(times)
        nt = t1 - t0 + 1
        if len(persons) * nt > limit:
            raise SizeGuardError(f"dense block {len(persons)}x{nt} exceeds limit {limit}")
        pidx = {p: j for j, p in enumerate(persons)}
        a = np.zeros(len(persons) * nt)
        b = np.zeros_like(a)
        for (_, i, t), w in wa.items():
            if _ == u:
                a[pidx[i] * nt + (t - t0)] = w
        for (_, i, t), w in wb.items():
            if _ == u:
                b[pidx[i] * nt + (t - t0)] = w
        S = build_sigma(corr.params(u), len(persons), nt)
        total.append(float(a @ S @ b))
    return math.fsum(total)


# --- component path --------------------------------------------------------

# Each cohort mean splits into pieces: a disjoint-person piece over the
# cohort's whole period, plus shared-person pieces over calendar windows.
# Window names are "<gamma status>_<nu status>"; gamma is the earlier cohort.
_MEANS = {
    ("gamma", "post"): [("g", "D"), ("s", "post_dot"), ("s", "post_pre"), ("s", "post_post")],
    ("nu", "post"): [("n", "D"), ("s", "post_post"), ("s", "dot_post")],
    ("gamma", "pre"): [("g", "D"), ("s", "pre_dot"), ("s", "pre_pre")],
    ("nu", "pre"): [("n", "D"), ("s", "pre_pre"), ("s", "post_pre"), ("s", "dot_pre")],
}


def _piece_duration(piece, cohort, period, W, T):
    group, win = piece
    if win == "D":
        return T[period]
    return getattr(W, "t_" + win)


def _shared_time(p1, c1, P1, p2, c2, P2, W):
    """Occasions common to the windows of two pieces."""
    (g1, w1), (g2, w2) = p1, p2
    if w1 == "D" and w2 == "D":
        name = f"{P1}_{P2}"  # c1 is gamma
        return getattr(W, "t_" + name, 0)
    if w1 == "D" or w2 == "D":
        c, P, w = (c1, P1, w2) if w1 == "D" else (c2, P2, w1)
        gs, ns = w.split("_")
        status = gs if c == "gamma" else ns
        return getattr(W, "t_" + w) if status == P else 0
    return getattr(W, "t_" + w1) if w1 == w2 else 0


def _pair_terms(T_pre, T_post, delta):
    """Yield (sign/time scale, bucket, overlap, d1*d2) for every piece pair."""
    W = window_durations(T_pre, T_post, delta)
    T = {"pre": T_pre, "post": T_post}
    for Pg, Pn, sign in (("post", "post", 1), ("pre", "pre", 1),
                         ("post", "pre", -1), ("pre", "post", -1)):
        scale = sign / (T[Pg] * T[Pn])
        for p1 in _MEANS[("gamma", Pg)]:
            d1 = _piece_duration(p1, "gamma", Pg, W, T)
            for p2 in _MEANS[("nu", Pn)]:
                d2 = _piece_duration(p2, "nu", Pn, W, T)
                ov = _shared_time(p1, "gamma", Pg, p2, "nu", Pn, W)
                yield scale, p1[0] + p2[0], ov, d1 * d2


def _piece_cov(bucket, ov, dd, counts, p):
    """Covariance of two piece sums in one unit (sigma2 excluded)."""
    ng, nn, ns = counts
    between = ov * p.phi + (dd - ov) * p.psi
    if bucket == "gn":
        return ng * nn * between
    if bucket == "gs":
        return ng * ns * between
    if bucket == "sn":
        return ns * nn * between
    # same shared persons on both sides
    return ns * (ov + (dd - ov) * p.rho) + ns * (ns - 1) * between


def cov_component_sum(pair, corr):
    """Covariance of two cohort estimates by summing window components.

    Parameters
    ----------
    pair : OverlapCounts
    corr : CorrelationStructure

    Returns
    -------
    float
    """
    if not pair.gamma_first and pair.delta:
        pair = pair.swapped()
    if pair.delta >= pair.T_pre + pair.T_post:
        return 0.0
    Ng, Nn = pair.N_gamma_ctrl, pair.N_nu_ctrl
    if Ng < 1 or Nn < 1:
        raise ValidationError("both cohorts need control members")
    terms = list(_pair_terms(pair.T_pre, pair.T_post, pair.delta))
    parts = []
    for z, a, b, s in zip(pair.control_units, pair.n_gamma, pair.n_nu, pair.n_shared):
        p = corr.params(z)
        cnt = (a - s, b - s, s)
        for scale, bucket, ov, dd in terms:
            parts.append(p.sigma2 * scale * _piece_cov(bucket, ov, dd, cnt, p))
    return math.fsum(parts) / (Ng * Nn)


def h_functions(T_pre, T_post, delta, rho, phi, psi):
    """Coefficients of the five count monomials, times (T_pre T_post)^2.

    Returns ``(h1, h2, h3, h4, h5)`` multiplying, per unit,
    ``N_g/n N_n/g``, ``N_s N_g/n``, ``N_s N_n/g``, ``N_s`` and
    ``N_s (N_s - 1)`` (sigma2 = 1).
    """
    h = [[] for _ in range(5)]
    big = (T_pre * T_post) ** 2
    for scale, bucket, ov, dd in _pair_terms(T_pre, T_post, delta):
        between = ov * phi + (dd - ov) * psi
        c = scale * big
        if bucket == "gn":
            h[0].append(c * between)
        elif bucket == "gs":
            h[1].append(c * between)
        elif bucket == "sn":
            h[2].append(c * between)
        else:
            h[3].append(c * (ov + (dd - ov) * rho))
            h[4].append(c * between)
    return tuple(math.fsum(x) for x in h)


def g1(T_pre, T_post, delta):
    """Time-factor numerator; equals ``time_factor * (T_pre T_post)^2``."""
    return time_factor_numerator(T_pre, T_post, delta)


def g2(T_pre, T_post, delta):
    """Residual rho-weighted term of the shared-person coefficient.

    Evaluated term by term as written (no simplification); it vanishes
    identically, which is what makes the covariance free of rho except
    through ``1 - rho``.
    """
    a, b, d = T_pre, T_post, delta
    m = min(a, b, d, _pos(a + b - d))
    m2 = min(_pos(d - a), b)
    inner = (b * _pos(d - b) + a * m2 - m2 * _pos(d - b) - min(a, d) * min(b, d)
             + m * (a + b - _pos(a - d) - m2 - _pos(b - d) - _pos(d - b) - m))
    return a * b * inner
