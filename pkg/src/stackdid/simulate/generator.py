"""Random-effects panel generator for staggered cohorts with shared controls.

Outcome model::

    Y = beta0 + beta1 * t + beta2 * A + b_i + c_{state,t} + e_{it}

with person intercepts ``b ~ N(0, s2_b)``, state-by-occasion effects
``c ~ N(0, s2_c R)`` where ``R`` is exchangeable with off-diagonal
``psi / phi``, and i.i.d. errors ``e ~ N(0, s2_e)``. The variance components
are chosen so that the marginal correlations are exactly (rho, phi, psi).

Every replicate owns a PCG64 stream spawned from the config seed, so
replicate ``r`` of an experiment is reproducible on its own.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from functools import cached_property

import numpy as np

from ..errors import ValidationError
from ..panel import OverlapCounts, PanelDataset, UnitRole

PRNG_ID = "numpy.random.PCG64 via SeedSequence(seed, spawn_key=(replicate,))"


@dataclass(frozen=True)
class SimConfig:
    """Simulation design.

    Cohort ``k`` (``k = 0..n_treated_states-1``) has policy occasion
    ``T_pre + k * delta``; occasions start at 0. Each control state holds
    ``floor(shared_fraction * persons_per_state)`` individuals eligible for
    every cohort (present over the union of the study periods) plus, per
    cohort, the remaining individuals present over that cohort's period
    only.
    """

    T_pre: int
    T_post: int
    delta: int
    shared_fraction: float
    rho: float
    phi: float
    psi: float
    n_treated_states: int = 2
    n_control_states: int = 3
    persons_per_state: int = 100
    sigma2_e: float = 1.0
    beta0: float = 0.0
    beta1_slope: float = 0.0
    beta2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        ints = ("T_pre", "T_post", "delta", "n_treated_states",
                "n_control_states", "persons_per_state", "seed")
        for name in ints:
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ValidationError(f"{name} must be an integer, got {v!r}")
        if self.T_pre < 1 or self.T_post < 1 or self.delta < 0:
            raise ValidationError("need T_pre, T_post >= 1 and delta >= 0")
        if self.n_treated_states < 1 or self.n_control_states < 1:
            raise ValidationError("need at least one treated and one control state")
        if self.persons_per_state < 2:
            raise ValidationError("persons_per_state must be >= 2")
        if not 0.0 <= self.shared_fraction <= 1.0:
            raise ValidationError("shared_fraction must lie in [0, 1]")
        if self.delta == 0 and self.n_treated_states > 1 and self.n_shared < self.persons_per_state:
            raise ValidationError(
                "with delta = 0 both cohorts share one study period, so every "
                "eligible control is shared; use shared_fraction = 1")
        if self.sigma2_e <= 0:
            raise ValidationError("sigma2_e must be positive")
        if not (self.rho >= self.phi >= self.psi >= 0.0):
            raise ValidationError("need rho >= phi >= psi >= 0")
        if self.phi == 0 and self.psi > 0:
            raise ValidationError("phi = 0 with psi > 0 leaves R undefined")
        if self.denominator <= 0:
            raise ValidationError("(1 - rho) - (phi - psi) must be positive")

    @property
    def denominator(self):
        return (1.0 - self.rho) - (self.phi - self.psi)

    @property
    def sigma2_b(self):
        return (self.rho - self.psi) / self.denominator * self.sigma2_e

    @property
    def sigma2_c(self):
        return self.phi / self.denominator * self.sigma2_e

    @property
    def sigma2(self):
        """Marginal outcome variance ``s2_b + s2_c + s2_e``."""
        return self.sigma2_e / self.denominator

    @property
    def n_shared(self):
        return int(math.floor(self.shared_fraction * self.persons_per_state + 1e-9))

    @property
    def n_occasions(self):
        return self.T_pre + self.T_post + (self.n_treated_states - 1) * self.delta

    def policy_occasion(self, k):
        return self.T_pre + k * self.delta

    def with_seed(self, seed):
        return replace(self, seed=seed)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = cls.__dataclass_fields__
        extra = sorted(set(d) - set(known))
        if extra:
            raise ValidationError(f"unknown simulation keys {extra}")
        return cls(**d)

    # closed-form companions -------------------------------------------
    def correlation_structure(self):
        from ..blockcov import CorrelationStructure
        return CorrelationStructure.homogeneous(self.rho, self.phi, self.psi, self.sigma2)

    def overlap(self, j=0, k=1):
        """Counts for cohorts ``j`` and ``k`` as realized by the generator."""
        units = tuple(f"C{z}" for z in range(self.n_control_states))
        P = self.persons_per_state
        n = (P,) * self.n_control_states
        s = (self.n_shared if j != k else P,) * self.n_control_states
        return OverlapCounts(f"T{j}", f"T{k}", units, n, n, s, P, P,
                             self.T_pre, self.T_post, abs(k - j) * self.delta,
                             j <= k)


class _Layout:
    """Index bookkeeping shared by the panel builder and the fast path."""

    def __init__(self, cfg):
        P, m, K = cfg.persons_per_state, cfg.n_shared, cfg.n_treated_states
        T = cfg.n_occasions
        unit, pid, lo, hi, state = [], [], [], [], []
        windows = [(cfg.policy_occasion(k) - cfg.T_pre,
                    cfg.policy_occasion(k) + cfg.T_post - 1) for k in range(K)]
        union = (windows[0][0], windows[-1][1])
        members = [[] for _ in range(K)]   # control person rows per cohort
        treated = []
        s_idx = 0
        for k in range(K):
            rows = list(range(len(unit), len(unit) + P))
            for i in range(P):
                unit.append(f"T{k}")
                pid.append(f"T{k}-{i}")
                lo.append(windows[k][0])
                hi.append(windows[k][1])
                state.append(s_idx)
            treated.append(np.array(rows))
            s_idx += 1
        for z in range(cfg.n_control_states):
            shared = list(range(len(unit), len(unit) + m))
            for i in range(m):
                unit.append(f"C{z}")
                pid.append(f"C{z}-s{i}")
                lo.append(union[0])
                hi.append(union[1])
                state.append(s_idx)
            for k in range(K):
                rows = list(range(len(unit), len(unit) + P - m))
                for i in range(P - m):
                    unit.append(f"C{z}")
                    pid.append(f"C{z}-k{k}-{i}")
                    lo.append(windows[k][0])
                    hi.append(windows[k][1])
                    state.append(s_idx)
                members[k].extend(shared + rows)
            s_idx += 1
        self.unit = unit
        self.pid = pid
        self.lo = np.array(lo)
        self.hi = np.array(hi)
        self.state = np.array(state)
        self.n_persons = len(unit)
        self.n_states = s_idx
        self.T = T
        self.treated = treated
        self.controls = [np.array(v) for v in members]
        self.windows = windows


def replicate_rng(seed, replicate):
    """Independent generator for one replicate."""
    ss = np.random.SeedSequence(seed, spawn_key=(int(replicate),))
    return np.random.Generator(np.random.PCG64(ss))


def _draw(cfg, lay, rng):
    """Noise array (persons x occasions) without the fixed part."""
    # unit-level draws first: configs differing only in persons_per_state
    # then share the same unit-by-occasion effects for a given seed
    z = rng.standard_normal((lay.n_states, lay.T + 1))
    if cfg.phi > 0:
        r = cfg.psi / cfg.phi
        c = math.sqrt(cfg.sigma2_c) * (math.sqrt(1.0 - r) * z[:, 1:]
                                       + math.sqrt(r) * z[:, :1])
    else:
        c = np.zeros((lay.n_states, lay.T))
    b = rng.standard_normal(lay.n_persons) * math.sqrt(cfg.sigma2_b)
    e = rng.standard_normal((lay.n_persons, lay.T)) * math.sqrt(cfg.sigma2_e)
    return b[:, None] + c[lay.state] + e


def _fixed(cfg, lay):
    t = np.arange(lay.T)
    F = np.broadcast_to(cfg.beta0 + cfg.beta1_slope * t, (lay.n_persons, lay.T)).copy()
    for k, rows in enumerate(lay.treated):
        F[np.ix_(rows, t >= cfg.policy_occasion(k))] += cfg.beta2
    return F


def simulate_panel(config, replicate=0):
    """Draw one panel from the generative model.

    Parameters
    ----------
    config : SimConfig
    replicate : int
        Stream index; replicate ``r`` matches replicate ``r`` of the
        experiment runners.

    Returns
    -------
    PanelDataset
        Treated units ``T0, T1, ...`` and control units ``C0, C1, ...``.
        Each person has rows only inside their presence window.
    """
    lay = _Layout(config)
    Y = _fixed(config, lay) + _draw(config, lay, replicate_rng(config.seed, replicate))
    t = np.arange(lay.T)
    mask = (t[None, :] >= lay.lo[:, None]) & (t[None, :] <= lay.hi[:, None])
    rows, cols = np.nonzero(mask)
    units = np.asarray(lay.unit, dtype=object)[rows]
    pids = np.asarray(lay.pid, dtype=object)[rows]
    roles = {f"T{k}": UnitRole(config.policy_occasion(k))
             for k in range(config.n_treated_states)}
    roles.update({f"C{z}": UnitRole() for z in range(config.n_control_states)})
    return PanelDataset(units, pids, cols.astype(np.int64), Y[rows, cols], roles)


def cohort_specs(config):
    """Cohort specs matching the generator's timing."""
    from ..panel import CohortSpec
    return [CohortSpec(f"T{k}", config.policy_occasion(k), config.T_pre, config.T_post)
            for k in range(config.n_treated_states)]


class FastSimulator:
    """Per-cohort plug-in estimates without building panels.

    Uses the same draws as :func:`simulate_panel`, so results agree with
    ``att_plugin`` on the simulated panel up to rounding.
    """

    def __init__(self, config):
        self.cfg = config
        self.lay = _Layout(config)
        self.F = _fixed(config, self.lay)

    @cached_property
    def _index(self):
        out = []
        c = self.cfg
        for k in range(c.n_treated_states):
            s = c.policy_occasion(k) - c.T_pre
            pre = np.arange(s, s + c.T_pre)
            post = np.arange(s + c.T_pre, s + c.T_pre + c.T_post)
            out.append((self.lay.treated[k], self.lay.controls[k], pre, post))
        return out

    def atts(self, replicate):
        Y = self.F + _draw(self.cfg, self.lay, replicate_rng(self.cfg.seed, replicate))
        res = np.empty(self.cfg.n_treated_states)
        for k, (tr, ct, pre, post) in enumerate(self._index):
            Yt, Yc = Y[tr], Y[ct]
            res[k] = ((Yt[:, post].mean() - Yt[:, pre].mean())
                      - (Yc[:, post].mean() - Yc[:, pre].mean()))
        return res

    def atts_many(self, replicates):
        return np.array([self.atts(r) for r in replicates])
