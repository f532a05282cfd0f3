"""Between-cohort correlations for the bundled cannabis-law count tables."""

from __future__ import annotations

import csv
import itertools
import statistics
from dataclasses import dataclass
from importlib import resources

import numpy as np

from ..blockcov import CorrelationStructure, att_correlation
from ..errors import FixtureError
from ..panel import OverlapCounts

T_PRE, T_POST = 48, 36

# Estimated (rho, phi, psi) per outcome, averaged over states.
OUTCOME_PARAMS = {
    "Any Opioid Rx": (0.463, 0.024, 0.023),
    "Any Non-Opioid Rx": (0.318, 0.014, 0.013),
    "Any Procedure": (0.181, 0.006, 0.004),
}

_FILES = ("cohort_sample_sizes.csv", "control_counts.csv", "disjoint_counts.csv",
          "shared_counts.csv", "policy_timing.csv")


def _read(path_or_dir, name):
    if path_or_dir is None:
        ref = resources.files("stackdid") / "data" / "cannabis" / name
        text = ref.read_text(encoding="utf-8")
    else:
        import pathlib
        p = pathlib.Path(path_or_dir) / name
        if not p.exists():
            raise FixtureError(f"fixture table {name} not found in {path_or_dir}")
        text = p.read_text(encoding="utf-8")
    return list(csv.DictReader(text.splitlines()))


@dataclass
class CannabisFixture:
    """Count tables for twelve treated-state cohorts.

    Attributes
    ----------
    sizes : dict
        cohort -> (n_treated, n_control)
    control : dict
        cohort -> {control_unit: count}
    shared : dict
        frozenset({a, b}) -> {control_unit: count}
    disjoint : dict
        (cohort, paired_cohort) -> {control_unit: count}
    timing : dict
        cohort -> policy occasion (months)
    """

    sizes: dict
    control: dict
    shared: dict
    disjoint: dict
    timing: dict

    @property
    def cohorts(self):
        return sorted(self.sizes)

    @property
    def control_units(self):
        return sorted({z for v in self.control.values() for z in v})

    def validate(self):
        """Raise FixtureError naming the first missing or inconsistent cell."""
        units = self.control_units
        for c in self.cohorts:
            if c not in self.control:
                raise FixtureError(f"control_counts: no rows for cohort {c}")
            for z in units:
                if z not in self.control[c]:
                    raise FixtureError(f"control_counts: missing cell ({c}, {z})")
            tot = sum(self.control[c].values())
            if tot != self.sizes[c][1]:
                raise FixtureError(
                    f"cohort_sample_sizes: n_control for {c} is {self.sizes[c][1]} "
                    f"but control_counts sum to {tot}")
            if c not in self.timing:
                raise FixtureError(f"policy_timing: missing cohort {c}")
        for a, b in itertools.combinations(self.cohorts, 2):
            key = frozenset((a, b))
            if key not in self.shared:
                raise FixtureError(f"shared_counts: missing pair ({a}, {b})")
            for z in units:
                if z not in self.shared[key]:
                    raise FixtureError(f"shared_counts: missing cell ({a}, {b}, {z})")
                s = self.shared[key][z]
                for x, y in ((a, b), (b, a)):
                    dj = self.disjoint.get((x, y), {}).get(z)
                    if dj is None:
                        raise FixtureError(f"disjoint_counts: missing cell ({x}, {y}, {z})")
                    if dj + s != self.control[x][z]:
                        raise FixtureError(
                            f"disjoint_counts: ({x}, {y}, {z}) = {dj} plus shared {s} "
                            f"differs from control count {self.control[x][z]}")
        return self

    def pair(self, a, b, T_pre=T_PRE, T_post=T_POST):
        """Overlap counts for cohorts ``a`` and ``b``."""
        units = tuple(self.control_units)
        key = frozenset((a, b))
        try:
            sh = self.shared[key]
            return OverlapCounts(
                a, b, units,
                tuple(self.control[a][z] for z in units),
                tuple(self.control[b][z] for z in units),
                tuple(sh[z] for z in units),
                self.sizes[a][0], self.sizes[b][0], T_pre, T_post,
                abs(self.timing[a] - self.timing[b]),
                self.timing[a] <= self.timing[b])
        except KeyError as exc:
            raise FixtureError(f"fixture has no counts for {exc} in pair ({a}, {b})") from None


def load_fixture(path=None, validate=True):
    """Load the count tables (bundled copy when ``path`` is None)."""
    rows = {n: _read(path, n) for n in _FILES}
    try:
        sizes = {r["cohort"]: (int(r["n_treated"]), int(r["n_control"]))
                 for r in rows["cohort_sample_sizes.csv"]}
        control = {}
        for r in rows["control_counts.csv"]:
            control.setdefault(r["cohort"], {})[r["control_unit"]] = int(r["count"])
        shared = {}
        for r in rows["shared_counts.csv"]:
            shared.setdefault(frozenset((r["cohort_a"], r["cohort_b"])), {})[
                r["control_unit"]] = int(r["count"])
        disjoint = {}
        for r in rows["disjoint_counts.csv"]:
            disjoint.setdefault((r["cohort"], r["paired_cohort"]), {})[
                r["control_unit"]] = int(r["count"])
        timing = {r["unit"]: int(r["policy_occasion"]) for r in rows["policy_timing.csv"]}
    except (KeyError, ValueError) as exc:
        raise FixtureError(f"malformed fixture table: {exc}") from None
    fx = CannabisFixture(sizes, control, shared, disjoint, timing)
    return fx.validate() if validate else fx


@dataclass
class CannabisResult:
    cohorts: list
    pairs: list  # (a, b, delta, correlation)
    matrix: np.ndarray

    @property
    def values(self):
        return [p[3] for p in self.pairs]

    @property
    def min(self):
        return min(self.values)

    @property
    def max(self):
        return max(self.values)

    @property
    def median(self):
        return statistics.median(self.values)

    def correlation(self, a, b):
        i, j = self.cohorts.index(a), self.cohorts.index(b)
        return float(self.matrix[i, j])

    def to_dict(self):
        return {"cohorts": self.cohorts,
                "pairs": [{"a": a, "b": b, "delta": d, "correlation": c}
                          for a, b, d, c in self.pairs],
                "summary": {"min": self.min, "max": self.max,
                            "median": self.median, "n_pairs": len(self.pairs)},
                "matrix": self.matrix.tolist()}


def cannabis_correlations(corr=None, fixture=None, timings=None,
                          T_pre=T_PRE, T_post=T_POST):
    """Closed-form correlations for every pair of treated-state cohorts.

    Parameters
    ----------
    corr : CorrelationStructure, optional
        Defaults to the "Any Opioid Rx" parameters with unit variance.
    fixture : CannabisFixture, optional
        Defaults to the bundled tables.
    timings : dict, optional
        cohort -> policy occasion; overrides the fixture's timing table.

    Returns
    -------
    CannabisResult
    """
    if corr is None:
        corr = CorrelationStructure.homogeneous(*OUTCOME_PARAMS["Any Opioid Rx"])
    fx = fixture if fixture is not None else load_fixture()
    if timings is not None:
        fx = CannabisFixture(fx.sizes, fx.control, fx.shared, fx.disjoint, dict(timings))
    cohorts = fx.cohorts
    M = np.eye(len(cohorts))
    pairs = []
    for (i, a), (j, b) in itertools.combinations(enumerate(cohorts), 2):
        pc = fx.pair(a, b, T_pre, T_post)
        r = att_correlation(pc, corr)
        M[i, j] = M[j, i] = r
        pairs.append((a, b, pc.delta, r))
    return CannabisResult(cohorts, pairs, M)
