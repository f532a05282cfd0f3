"""Person-time panels, cohort construction and shared-control counts.

Occasions are consecutive integers. Presence intervals are inferred from the
observed rows: a gap in an individual's occasions splits the presence run.
"""

from __future__ import annotations

import csv
import itertools
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import (CohortMismatchError, DegenerateCohortError,
                     PanelConsistencyError, PanelParseError,
                     UnitLookupError, ValidationError)

_token_counter = itertools.count(1)

DEFAULT_SCHEMA = {"unit": "unit", "individual": "individual",
                  "occasion": "occasion", "outcome": "outcome"}


@dataclass(frozen=True)
class UnitRole:
    """Role of a unit: treated at ``policy_occasion``, or control if None."""

    policy_occasion: Optional[int] = None

    @property
    def treated(self):
        return self.policy_occasion is not None


class PanelDataset:
    """Immutable person-time panel.

    Parameters
    ----------
    units, individuals : sequence of str
    occasions : sequence of int
    outcomes : sequence of float
    unit_roles : mapping of unit id to :class:`UnitRole`
        Units missing from the mapping are treated as controls.
    enrollment : mapping of individual id to list of (lo, hi), optional
        Declared presence intervals (strict mode). Every observation must
        fall inside one of them; they then replace the inferred runs.
    """

    def __init__(self, units, individuals, occasions, outcomes,
                 unit_roles=None, enrollment=None):
        units = np.asarray(units, dtype=object)
        individuals = np.asarray(individuals, dtype=object)
        occasions = np.asarray(occasions)
        outcomes = np.asarray(outcomes, dtype=float)
        n = len(units)
        if not (len(individuals) == len(occasions) == len(outcomes) == n):
            raise ValidationError("panel columns have different lengths")
        if n and not np.issubdtype(occasions.dtype, np.integer):
            raise PanelParseError("occasions must be integers")
        occasions = occasions.astype(np.int64)

        ind_ids, ind_code = np.unique(individuals.astype(str), return_inverse=True) \
            if n else (np.array([], dtype=object), np.array([], dtype=np.int64))
        order = np.lexsort((occasions, ind_code)) if n else np.array([], dtype=np.int64)
        sc, so, su = ind_code[order], occasions[order], units[order]

        same = sc[1:] == sc[:-1]
        dup = same & (so[1:] == so[:-1])
        if dup.any():
            k = int(np.flatnonzero(dup)[0])
            rows = sorted(int(r) for r in (order[k], order[k + 1]))
            raise PanelParseError(
                f"duplicate (unit, individual, occasion) for individual "
                f"{ind_ids[sc[k]]!r} at occasion {int(so[k])} (rows {rows})", rows)
        clash = same & (su[1:] != su[:-1])
        if clash.any():
            k = int(np.flatnonzero(clash)[0])
            raise PanelConsistencyError(
                f"individual {ind_ids[sc[k]]!r} appears in units "
                f"{su[k]!r} and {su[k + 1]!r}")

        self._units = units
        self._individuals = individuals.astype(str)
        self._occasions = occasions
        self._outcomes = outcomes
        for arr in (self._units, self._individuals, self._occasions, self._outcomes):
            arr.setflags(write=False)
        self.unit_roles = dict(unit_roles or {})
        for u in np.unique(units.astype(str)) if n else ():
            self.unit_roles.setdefault(str(u), UnitRole())
        self.token = next(_token_counter)

        # presence runs: break wherever the individual changes or occasions skip
        starts = np.ones(n, dtype=bool)
        if n:
            starts[1:] = ~same | (so[1:] != so[:-1] + 1)
        run_start = np.flatnonzero(starts)
        run_end = np.append(run_start[1:], n) - 1
        presence = {}
        unit_of = {}
        for s, e in zip(run_start, run_end):
            ind = str(ind_ids[sc[s]])
            presence.setdefault(ind, []).append((int(so[s]), int(so[e])))
            unit_of[ind] = str(su[s])
        if enrollment is not None:
            presence = _check_enrollment(presence, enrollment)
        self.presence = {k: tuple(v) for k, v in presence.items()}
        self.unit_of = unit_of

        # sorted lookup keys for (individual, occasion) -> outcome
        self._ind_ids = np.asarray(ind_ids, dtype=str)
        self._code_of = {str(v): i for i, v in enumerate(ind_ids)}
        self._occ_lo = int(occasions.min()) if n else 0
        self._span = (int(occasions.max()) - self._occ_lo + 1) if n else 1
        self._keys = sc.astype(np.int64) * self._span + (so - self._occ_lo)
        self._sorted_outcomes = outcomes[order]

    # --- basic accessors -------------------------------------------------
    def __len__(self):
        return len(self._outcomes)

    @property
    def units(self):
        return self._units

    @property
    def individuals(self):
        return self._individuals

    @property
    def occasions(self):
        return self._occasions

    @property
    def outcomes(self):
        return self._outcomes

    @property
    def n_individuals(self):
        return len(self.presence)

    def treated_units(self):
        return sorted(u for u, r in self.unit_roles.items() if r.treated)

    def control_units(self):
        return sorted(u for u, r in self.unit_roles.items() if not r.treated)

    def individuals_in(self, unit):
        return sorted(i for i, u in self.unit_of.items() if u == unit)

    def outcome_matrix(self, individuals, occasions):
        """Outcomes for ``individuals`` x ``occasions``; NaN where missing."""
        individuals = list(individuals)
        occ = np.asarray(list(occasions), dtype=np.int64)
        out = np.full((len(individuals), len(occ)), np.nan)
        if not individuals or not len(occ) or not len(self):
            return out
        codes = np.array([self._code_of.get(i, -1) for i in individuals])
        rel = occ - self._occ_lo
        ok_t = (rel >= 0) & (rel < self._span)
        keys = codes[:, None] * self._span + rel[None, :]
        pos = np.searchsorted(self._keys, keys)
        pos = np.clip(pos, 0, len(self._keys) - 1)
        hit = (self._keys[pos] == keys) & (codes[:, None] >= 0) & ok_t[None, :]
        out[hit] = self._sorted_outcomes[pos[hit]]
        return out

    def subset(self, individuals):
        """New panel restricted to ``individuals`` (roles kept)."""
        keep = np.isin(self._individuals, np.asarray(sorted(set(individuals)), dtype=str))
        return PanelDataset(self._units[keep], self._individuals[keep],
                            self._occasions[keep], self._outcomes[keep],
                            self.unit_roles)

    def with_outcomes(self, outcomes):
        """Same person-time layout with replaced outcomes."""
        return PanelDataset(self._units, self._individuals, self._occasions,
                            outcomes, self.unit_roles)


def _check_enrollment(observed, declared):
    out = {}
    for ind, runs in observed.items():
        decl = [tuple(map(int, iv)) for iv in declared.get(ind, ())]
        if not decl:
            raise PanelConsistencyError(f"no enrollment declared for {ind!r}")
        for lo, hi in runs:
            if not any(a <= lo and hi <= b for a, b in decl):
                raise PanelConsistencyError(
                    f"observations of {ind!r} over [{lo}, {hi}] fall outside "
                    f"declared enrollment {decl}")
        out[ind] = sorted(decl)
    return out


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    return source


def load_units(source, delimiter=","):
    """Read a units table with columns ``unit,role,policy_occasion``."""
    fh = _open_text(source)
    try:
        reader = csv.DictReader(fh, delimiter=delimiter)
        need = {"unit", "role", "policy_occasion"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise PanelParseError(f"units table needs columns {sorted(need)}")
        roles = {}
        for lineno, row in enumerate(reader, start=2):
            role = (row["role"] or "").strip().lower()
            raw = (row["policy_occasion"] or "").strip()
            if role == "treated":
                try:
                    roles[row["unit"]] = UnitRole(int(raw))
                except ValueError:
                    raise PanelParseError(
                        f"row {lineno}: treated unit {row['unit']!r} needs an "
                        f"integer policy_occasion, got {raw!r}", [lineno]) from None
            elif role == "control":
                if raw:
                    raise PanelParseError(
                        f"row {lineno}: control unit {row['unit']!r} has a "
                        f"policy_occasion", [lineno])
                roles[row["unit"]] = UnitRole()
            else:
                raise PanelParseError(f"row {lineno}: unknown role {role!r}", [lineno])
        return roles
    finally:
        if fh is not source:
            fh.close()


def load_panel(source, units=None, schema=None, delimiter=",", enrollment=None):
    """Read a delimited person-time file into a :class:`PanelDataset`.

    Parameters
    ----------
    source : path or text stream
        Header row plus one row per (unit, individual, occasion).
    units : path, text stream or mapping, optional
        Units table (see :func:`load_units`) or a ready role mapping.
    schema : mapping, optional
        Maps the logical names ``unit, individual, occasion, outcome`` to
        column names in the file.
    delimiter : str
    enrollment : mapping, optional
        Declared presence intervals, cross-checked against the rows.

    Raises
    ------
    PanelParseError
        Missing columns, non-integer occasions, bad outcomes or duplicate
        rows. Row numbers count the header as row 1.
    PanelConsistencyError
        An individual appears under more than one unit.
    """
    cols = dict(DEFAULT_SCHEMA)
    cols.update(schema or {})
    fh = _open_text(source)
    try:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise PanelParseError("panel file has no header row")
        missing = [c for c in cols.values() if c not in reader.fieldnames]
        if missing:
            raise PanelParseError(f"panel file lacks columns {missing}")
        U, I, O, Y = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            raw = (row[cols["occasion"]] or "").strip()
            try:
                occ = int(raw)
            except ValueError:
                raise PanelParseError(
                    f"row {lineno}: occasion {raw!r} is not an integer", [lineno]) from None
            try:
                y = float(row[cols["outcome"]])
            except (TypeError, ValueError):
                raise PanelParseError(
                    f"row {lineno}: outcome {row[cols['outcome']]!r} is not a number",
                    [lineno]) from None
            U.append(row[cols["unit"]])
            I.append(row[cols["individual"]])
            O.append(occ)
            Y.append(y)
    finally:
        if fh is not source:
            fh.close()

    if units is None or isinstance(units, Mapping):
        roles = dict(units or {})
    else:
        roles = load_units(units, delimiter=delimiter)
    try:
        return PanelDataset(U, I, np.asarray(O, dtype=np.int64), Y, roles, enrollment)
    except PanelParseError as exc:
        # report file rows (header is row 1) rather than 0-based indices
        rows = [r + 2 for r in exc.rows]
        msg = str(exc).split(" (rows")[0]
        raise PanelParseError(f"{msg} (file rows {rows})", rows) from None


def write_panel(panel, dest, delimiter=","):
    """Write ``panel`` in the layout read by :func:`load_panel`."""
    fh = open(dest, "w", newline="", encoding="utf-8") if isinstance(dest, (str, os.PathLike)) else dest
    try:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["unit", "individual", "occasion", "outcome"])
        for row in zip(panel.units, panel.individuals, panel.occasions, panel.outcomes):
            w.writerow([row[0], row[1], int(row[2]), repr(float(row[3]))])
    finally:
        if fh is not dest:
            fh.close()


def write_units(roles, dest, delimiter=","):
    """Write a unit table from a role mapping or a :class:`PanelDataset`."""
    if isinstance(roles, PanelDataset):
        roles = roles.unit_roles
    fh = open(dest, "w", newline="", encoding="utf-8") if isinstance(dest, (str, os.PathLike)) else dest
    try:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["unit", "role", "policy_occasion"])
        for u in sorted(roles):
            r = roles[u]
            w.writerow([u, "treated" if r.treated else "control",
                        "" if r.policy_occasion is None else r.policy_occasion])
    finally:
        if fh is not dest:
            fh.close()


# --- cohorts -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CohortSpec:
    """Timing of one treated unit's stacked study.

    The study period is ``[t* - T_pre, t* + T_post - 1]``. When
    ``eligibility_marker`` is given (individual id -> marker occasions), a
    member needs at least one marker inside ``[t* - T_pre, t* - 1]``.
    """

    treated_unit: str
    policy_occasion: int
    T_pre: int
    T_post: int
    eligibility_marker: Optional[Mapping[str, Iterable[int]]] = None

    def __post_init__(self):
        for name in ("policy_occasion", "T_pre", "T_post"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ValidationError(f"{name} must be an integer, got {v!r}")
        if self.T_pre < 1 or self.T_post < 1:
            raise ValidationError("T_pre and T_post must be >= 1")

    @property
    def start(self):
        return self.policy_occasion - self.T_pre

    @property
    def end(self):
        return self.policy_occasion + self.T_post - 1

    @property
    def occasions(self):
        return range(self.start, self.end + 1)

    def same_timing(self, other):
        return (self.treated_unit, self.policy_occasion, self.T_pre, self.T_post) == \
            (other.treated_unit, other.policy_occasion, other.T_pre, other.T_post)


@dataclass(frozen=True, eq=False)
class Cohort:
    """Members of one stacked study, per unit.

    ``members`` maps every control unit and the treated unit to the set of
    included individual ids.
    """

    spec: CohortSpec
    members: Mapping[str, frozenset]
    panel_token: int = field(default=0, repr=False)

    @property
    def treated_unit(self):
        return self.spec.treated_unit

    @property
    def treated_members(self):
        return self.members[self.spec.treated_unit]

    @property
    def control_units(self):
        return sorted(u for u in self.members if u != self.spec.treated_unit)

    @property
    def n_treated(self):
        return len(self.treated_members)

    @property
    def n_control(self):
        return sum(len(self.members[u]) for u in self.control_units)

    def person_time(self):
        """Iterate over the (individual, occasion) pairs of the cohort."""
        for u in sorted(self.members):
            for i in sorted(self.members[u]):
                for t in self.spec.occasions:
                    yield i, t

    def counts(self):
        from .blockcov.closed_form import CohortCounts
        cu = self.control_units
        return CohortCounts(self.treated_unit, self.n_treated, tuple(cu),
                            tuple(len(self.members[u]) for u in cu),
                            self.spec.T_pre, self.spec.T_post,
                            self.spec.policy_occasion)


def _eligible(presence, markers, spec):
    lo, hi = spec.start, spec.end
    if not any(a <= lo and hi <= b for a, b in presence):
        return False
    if markers is None:
        return True
    return any(spec.start <= m <= spec.policy_occasion - 1 for m in markers)


def build_cohort(panel, spec):
    """Select the individuals that enter ``spec``'s study.

    Members are individuals of the treated unit or of any control unit who
    are present over the whole study period and, if markers are supplied,
    have a marker in the pre-period. Other treated units contribute nobody.

    Raises
    ------
    UnitLookupError
        ``spec.treated_unit`` is not a treated unit of ``panel``.
    DegenerateCohortError
        No treated or no control members qualify.
    """
    role = panel.unit_roles.get(spec.treated_unit)
    if role is None or not role.treated:
        raise UnitLookupError(f"{spec.treated_unit!r} is not a treated unit of the panel")
    keep = {spec.treated_unit} | set(panel.control_units())
    marks = spec.eligibility_marker
    members = {u: set() for u in keep}
    for ind, unit in panel.unit_of.items():
        if unit not in keep:
            continue
        m = None if marks is None else marks.get(ind, ())
        if _eligible(panel.presence[ind], m, spec):
            members[unit].add(ind)
    cohort = Cohort(spec, {u: frozenset(v) for u, v in members.items()}, panel.token)
    if cohort.n_treated == 0:
        raise DegenerateCohortError(f"cohort {spec.treated_unit!r} has no treated members")
    if cohort.n_control == 0:
        raise DegenerateCohortError(f"cohort {spec.treated_unit!r} has no control members")
    return cohort


@dataclass(frozen=True)
class OverlapCounts:
    """Shared-control counts for a pair of cohorts.

    Per control unit: ``n_gamma`` and ``n_nu`` members of each cohort and
    ``n_shared`` members of both. ``gamma_first`` records whether gamma's
    policy date is not later than nu's.
    """

    gamma: str
    nu: str
    control_units: tuple
    n_gamma: tuple
    n_nu: tuple
    n_shared: tuple
    n_treated_gamma: int
    n_treated_nu: int
    T_pre: int
    T_post: int
    delta: int
    gamma_first: bool = True

    def __post_init__(self):
        k = len(self.control_units)
        if not (len(self.n_gamma) == len(self.n_nu) == len(self.n_shared) == k):
            raise ValidationError("count vectors must match the control units")
        for z, a, b, s in zip(self.control_units, self.n_gamma, self.n_nu, self.n_shared):
            if min(a, b, s) < 0:
                raise ValidationError(f"negative count for unit {z!r}")
            if s > min(a, b):
                raise ValidationError(
                    f"shared count {s} exceeds cohort counts ({a}, {b}) in unit {z!r}")
        if self.delta < 0:
            raise ValidationError("delta must be nonnegative")
        if self.T_pre < 1 or self.T_post < 1:
            raise ValidationError("T_pre and T_post must be >= 1")

    @property
    def n_gamma_only(self):
        return tuple(a - s for a, s in zip(self.n_gamma, self.n_shared))

    @property
    def n_nu_only(self):
        return tuple(b - s for b, s in zip(self.n_nu, self.n_shared))

    @property
    def N_gamma_ctrl(self):
        return sum(self.n_gamma)

    @property
    def N_nu_ctrl(self):
        return sum(self.n_nu)

    def cohort_gamma(self):
        from .blockcov.closed_form import CohortCounts
        return CohortCounts(self.gamma, self.n_treated_gamma, self.control_units,
                            self.n_gamma, self.T_pre, self.T_post)

    def cohort_nu(self):
        from .blockcov.closed_form import CohortCounts
        return CohortCounts(self.nu, self.n_treated_nu, self.control_units,
                            self.n_nu, self.T_pre, self.T_post)

    def swapped(self):
        return OverlapCounts(self.nu, self.gamma, self.control_units, self.n_nu,
                             self.n_gamma, self.n_shared, self.n_treated_nu,
                             self.n_treated_gamma, self.T_pre, self.T_post,
                             self.delta, not self.gamma_first if self.delta else True)


def overlap_counts(a, b):
    """Per-control-unit intersections of two cohorts' rosters.

    Raises
    ------
    CohortMismatchError
        The cohorts come from different panels, or have different
        pre/post lengths.
    """
    if a.panel_token != b.panel_token:
        raise CohortMismatchError("cohorts were built from different panels")
    if (a.spec.T_pre, a.spec.T_post) != (b.spec.T_pre, b.spec.T_post):
        raise CohortMismatchError("cohorts must share T_pre and T_post")
    if a.treated_unit == b.treated_unit and not a.spec.same_timing(b.spec):
        raise CohortMismatchError("two cohorts of one treated unit must have identical specs")
    units = sorted((set(a.control_units) | set(b.control_units))
                   - {a.treated_unit, b.treated_unit})
    ma = [a.members.get(u, frozenset()) for u in units]
    mb = [b.members.get(u, frozenset()) for u in units]
    return OverlapCounts(
        a.treated_unit, b.treated_unit, tuple(units),
        tuple(len(x) for x in ma), tuple(len(y) for y in mb),
        tuple(len(x & y) for x, y in zip(ma, mb)),
        a.n_treated, b.n_treated, a.spec.T_pre, a.spec.T_post,
        abs(a.spec.policy_occasion - b.spec.policy_occasion),
        a.spec.policy_occasion <= b.spec.policy_occasion)
