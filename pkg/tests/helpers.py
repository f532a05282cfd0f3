"""Shared builders and hypothesis strategies for the test suite."""

import numpy as np
from hypothesis import strategies as st

from stackdid.blockcov import CorrelationStructure, StateParams
from stackdid.panel import OverlapCounts, PanelDataset, UnitRole


@st.composite
def state_params(draw, sigma2=None):
    rho = draw(st.floats(0.0, 0.95))
    phi = draw(st.floats(0.0, rho)) if rho > 0 else 0.0
    psi = draw(st.floats(0.0, phi)) if phi > 0 else 0.0
    s2 = sigma2 if sigma2 is not None else draw(st.floats(0.2, 5.0))
    return StateParams(rho, phi, psi, s2)


@st.composite
def overlap_pairs(draw, max_t=8, max_delta=20, max_units=3, max_n=12, min_shared=0):
    T_pre = draw(st.integers(1, max_t))
    T_post = draw(st.integers(1, max_t))
    delta = draw(st.integers(0, max_delta))
    k = draw(st.integers(1, max_units))
    units = tuple(f"Z{i}" for i in range(k))
    ng, nn, ns = [], [], []
    for _ in units:
        a = draw(st.integers(max(1, min_shared), max_n))
        if delta == 0:
            # one study period: every control is in both cohorts
            b, s = a, a
        else:
            b = draw(st.integers(max(1, min_shared), max_n))
            s = draw(st.integers(min_shared, min(a, b)))
        ng.append(a)
        nn.append(b)
        ns.append(s)
    tg = draw(st.integers(1, 5))
    tn = draw(st.integers(1, 5))
    gamma_first = draw(st.booleans())
    return OverlapCounts("G", "N", units, tuple(ng), tuple(nn), tuple(ns), tg, tn,
                         T_pre, T_post, delta, gamma_first)


@st.composite
def structures(draw, units=("Z0", "Z1", "Z2"), heterogeneous=True):
    default = draw(state_params())
    over = {}
    if heterogeneous:
        for u in units:
            if draw(st.booleans()):
                over[u] = draw(state_params())
    return CorrelationStructure(default, over)


def toy_panel(rows, roles):
    """PanelDataset from (unit, individual, occasion, outcome) tuples."""
    if rows:
        u, i, t, y = zip(*rows)
    else:
        u = i = t = y = ()
    return PanelDataset(np.array(u, dtype=object), np.array(i, dtype=object),
                        np.array(t, dtype=np.int64), np.array(y, dtype=float),
                        {k: UnitRole(v) for k, v in roles.items()})


def random_panel(rng, n_treated=1, n_control=2, persons=5, T=6, policy=3):
    """Complete random panel with treated units ``T*`` and controls ``C*``."""
    rows = []
    roles = {}
    units = [f"T{k}" for k in range(n_treated)] + [f"C{k}" for k in range(n_control)]
    for u in units:
        roles[u] = policy if u.startswith("T") else None
        for i in range(persons):
            for t in range(T):
                rows.append((u, f"{u}-{i}", t, float(rng.normal())))
    return toy_panel(rows, roles)
