import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stackdid.errors import (CohortMismatchError, DegenerateCohortError,
                             PanelConsistencyError, PanelParseError,
                             UnitLookupError)
from stackdid.panel import (CohortSpec, build_cohort, load_panel, load_units,
                            overlap_counts, write_panel, write_units)

from helpers import random_panel, toy_panel

UNITS = "unit,role,policy_occasion\nT,treated,3\nC,control,\n"


def _load(text, units=UNITS):
    return load_panel(io.StringIO(text), io.StringIO(units))


def test_gap_splits_presence():
    p = _load("unit,individual,occasion,outcome\nC,a,1,0\nC,a,2,0\nC,a,3,0\nC,a,5,0\n")
    assert p.presence["a"] == ((1, 3), (5, 5))


def test_empty_file():
    p = _load("unit,individual,occasion,outcome\n")
    assert p.n_individuals == 0 and len(p) == 0


def test_individual_in_two_units():
    with pytest.raises(PanelConsistencyError):
        _load("unit,individual,occasion,outcome\nAL,a,1,0\nGA,a,2,0\n")


def test_duplicate_rows_reported_with_file_rows():
    with pytest.raises(PanelParseError) as exc:
        _load("unit,individual,occasion,outcome\nC,a,1,0\nC,b,1,0\nC,a,1,2\n")
    assert exc.value.rows == [2, 4]


def test_non_integer_occasion():
    with pytest.raises(PanelParseError) as exc:
        _load("unit,individual,occasion,outcome\nC,a,1,0\nC,a,x,0\n")
    assert exc.value.rows == [3]


def test_schema_and_delimiter():
    text = "st;pid;t;y\nC;a;1;0.5\nC;a;2;1.5\n"
    p = load_panel(io.StringIO(text), {}, schema={"unit": "st", "individual": "pid",
                                                  "occasion": "t", "outcome": "y"},
                   delimiter=";")
    assert p.presence["a"] == ((1, 2),)
    np.testing.assert_allclose(p.outcome_matrix(["a"], [1, 2]), [[0.5, 1.5]])


def test_units_table_errors():
    with pytest.raises(PanelParseError):
        load_units(io.StringIO("unit,role,policy_occasion\nT,treated,\n"))
    with pytest.raises(PanelParseError):
        load_units(io.StringIO("unit,role,policy_occasion\nC,control,4\n"))


def test_enrollment_cross_check():
    text = "unit,individual,occasion,outcome\nC,a,1,0\nC,a,2,0\n"
    p = load_panel(io.StringIO(text), {}, enrollment={"a": [(0, 5)]})
    assert p.presence["a"] == ((0, 5),)
    with pytest.raises(PanelConsistencyError):
        load_panel(io.StringIO(text), {}, enrollment={"a": [(2, 5)]})


def test_write_and_reload(tmp_path):
    p = random_panel(np.random.default_rng(0))
    write_panel(p, tmp_path / "p.csv")
    write_units(p, tmp_path / "u.csv")
    q = load_panel(tmp_path / "p.csv", tmp_path / "u.csv")
    assert q.presence == p.presence and q.unit_roles == p.unit_roles
    ind = sorted(p.presence)
    np.testing.assert_array_equal(p.outcome_matrix(ind, range(6)), q.outcome_matrix(ind, range(6)))


# --- cohorts ------------------------------------------------------------------

def _calendar_panel():
    """Monthly toy: occasion 0 is the first month, two treated states."""
    rows = []
    people = {
        # unit, id, first, last
        ("CT", "t1"): (0, 93), ("MN", "m1"): (0, 93),
        ("AL", "shared"): (0, 93),     # present for both studies
        ("AL", "early"): (0, 83),      # leaves before the later study ends
        ("AL", "late"): (10, 93),      # arrives after the earlier study starts
        ("GA", "short"): (5, 60),
    }
    for (u, i), (lo, hi) in people.items():
        rows += [(u, i, t, 0.0) for t in range(lo, hi + 1)]
    return toy_panel(rows, {"CT": 48, "MN": 58, "AL": None, "GA": None})


def _eligible_bruteforce(panel, spec, marks):
    out = set()
    for ind, unit in panel.unit_of.items():
        role = panel.unit_roles[unit]
        if role.treated and unit != spec.treated_unit:
            continue
        occ = {t for lo, hi in panel.presence[ind] for t in range(lo, hi + 1)}
        need = set(range(spec.policy_occasion - spec.T_pre, spec.policy_occasion + spec.T_post))
        if not need <= occ:
            continue
        if marks is not None and not any(
                spec.policy_occasion - spec.T_pre <= m < spec.policy_occasion
                for m in marks.get(ind, ())):
            continue
        out.add(ind)
    return out


def test_calendar_toy_cohorts_and_overlap():
    p = _calendar_panel()
    marks = {"t1": [20], "m1": [20], "shared": [15], "early": [20], "late": [30], "short": [7]}
    ct = build_cohort(p, CohortSpec("CT", 48, 48, 36, marks))
    mn = build_cohort(p, CohortSpec("MN", 58, 48, 36, marks))
    for c in (ct, mn):
        got = set().union(*c.members.values())
        assert got == _eligible_bruteforce(p, c.spec, marks)
    assert "shared" in ct.members["AL"] and "shared" in mn.members["AL"]
    ov = overlap_counts(ct, mn)
    i = ov.control_units.index("AL")
    assert ov.n_shared[i] == len(ct.members["AL"] & mn.members["AL"]) == 1
    assert ov.delta == 10


def test_marker_boundaries():
    rows = [(u, i, t, 0.0) for u, i in (("T", "x"), ("C", "a"), ("C", "b")) for t in range(0, 6)]
    p = toy_panel(rows, {"T": 3, "C": None})
    spec = CohortSpec("T", 3, 3, 3, {"x": [2], "a": [2], "b": [3]})
    c = build_cohort(p, spec)
    assert c.members["C"] == frozenset({"a"})


def test_build_cohort_errors():
    rows = [("T", "x", t, 0.0) for t in range(6)] + [("C", "a", t, 0.0) for t in range(2, 6)]
    p = toy_panel(rows, {"T": 3, "C": None})
    with pytest.raises(UnitLookupError):
        build_cohort(p, CohortSpec("ZZ", 3, 3, 3))
    with pytest.raises(DegenerateCohortError):
        build_cohort(p, CohortSpec("T", 3, 3, 3))


def test_self_overlap_and_mismatch():
    p = random_panel(np.random.default_rng(1), n_treated=2)
    a = build_cohort(p, CohortSpec("T0", 3, 3, 3))
    ov = overlap_counts(a, a)
    assert ov.n_shared == ov.n_gamma and ov.delta == 0
    q = random_panel(np.random.default_rng(1), n_treated=2)
    with pytest.raises(CohortMismatchError):
        overlap_counts(a, build_cohort(q, CohortSpec("T1", 3, 3, 3)))
    with pytest.raises(CohortMismatchError):
        overlap_counts(a, build_cohort(p, CohortSpec("T1", 3, 2, 3)))


def test_no_joint_eligibility_gives_zero_shared():
    rows = []
    for i in range(3):
        rows += [("C", f"e{i}", t, 0.0) for t in range(0, 4)]
        rows += [("C", f"l{i}", t, 0.0) for t in range(6, 10)]
    rows += [("A", "a", t, 0.0) for t in range(0, 4)] + [("B", "b", t, 0.0) for t in range(6, 10)]
    p = toy_panel(rows, {"A": 2, "B": 8, "C": None})
    ov = overlap_counts(build_cohort(p, CohortSpec("A", 2, 2, 2)),
                        build_cohort(p, CohortSpec("B", 8, 2, 2)))
    assert ov.n_shared == (0,) and ov.n_gamma == (3,) and ov.n_nu == (3,)


@st.composite
def _ragged_panels(draw):
    rows = []
    for u in ("A", "B", "C", "D"):
        for i in range(draw(st.integers(1, 5))):
            lo = draw(st.integers(0, 6))
            hi = draw(st.integers(lo, 12))
            rows += [(u, f"{u}{i}", t, 0.0) for t in range(lo, hi + 1)]
    return rows


@settings(max_examples=60, deadline=None)
@given(_ragged_panels(), st.randoms(use_true_random=False))
def test_overlap_invariants_and_row_order(rows, rnd):
    roles = {"A": 4, "B": 6, "C": None, "D": None}
    p = toy_panel(rows, roles)
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    q = toy_panel(shuffled, roles)
    specs = [CohortSpec("A", 4, 2, 2), CohortSpec("B", 6, 2, 2)]
    try:
        a, b = (build_cohort(p, s) for s in specs)
    except DegenerateCohortError:
        return
    # order independence and idempotence
    assert build_cohort(q, specs[0]).members == a.members == build_cohort(p, specs[0]).members
    # stacking: treated rosters never leak into another cohort
    assert not a.members.get("B") and not b.members.get("A")
    ov = overlap_counts(a, b)
    for z, ng, nn, ns in zip(ov.control_units, ov.n_gamma, ov.n_nu, ov.n_shared):
        ma, mb = a.members.get(z, frozenset()), b.members.get(z, frozenset())
        assert (ng, nn, ns) == (len(ma), len(mb), len(ma & mb))
        assert ng - ns == len(ma - mb) and nn - ns == len(mb - ma)
    assert ov.delta == 2
