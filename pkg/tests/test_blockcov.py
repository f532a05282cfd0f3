import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stackdid.blockcov import (CohortCounts, CohortDesign, CorrelationStructure,
                               StateParams, att_correlation, att_covariance,
                               att_variance, build_sigma, cov_component_sum,
                               cov_exact_oracle, designs_from_counts,
                               time_factor, validate_structure, variance_terms)
from stackdid.errors import SizeGuardError, ValidationError
from stackdid.panel import OverlapCounts

from helpers import overlap_pairs, state_params, structures


def _close(x, y, scale, rel=1e-10):
    return abs(x - y) <= rel * max(abs(x), abs(y), scale)


def _scale(pair, corr):
    return math.sqrt(att_variance(pair.cohort_gamma(), corr)
                     * att_variance(pair.cohort_nu(), corr))


# --- oracle agreement -------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(overlap_pairs(), structures())
def test_three_covariance_paths_agree(pair, corr):
    w = att_covariance(pair, corr).value
    c = cov_component_sum(pair, corr)
    e = cov_exact_oracle(*designs_from_counts(pair), corr)
    s = _scale(pair, corr)
    assert _close(w, c, s) and _close(w, e, s) and _close(c, e, s)


@settings(max_examples=40, deadline=None)
@given(overlap_pairs(max_delta=0), structures())
def test_variance_matches_dense_quadratic_form(pair, corr):
    A, _ = designs_from_counts(pair, include_treated=True)
    v = att_variance(pair.cohort_gamma(), corr)
    assert _close(v, cov_exact_oracle(A, A, corr, include_treated=True), v)


def test_covariance_worked_instance():
    corr = CorrelationStructure.homogeneous(0.3, 0.1, 0.05)
    pair = OverlapCounts("G", "N", ("A", "B"), (10, 10), (10, 10), (5, 5), 4, 4, 2, 2, 1)
    w = att_covariance(pair, corr).value
    e = cov_exact_oracle(*designs_from_counts(pair), corr)
    assert w == pytest.approx(e, rel=1e-12)
    assert w == pytest.approx(cov_component_sum(pair, corr), rel=1e-12)


def test_covariance_breakdown_sums_to_value():
    corr = CorrelationStructure(StateParams(0.4, 0.2, 0.1),
                                {"B": StateParams(0.2, 0.1, 0.0, 3.0)})
    pair = OverlapCounts("G", "N", ("A", "B"), (7, 9), (8, 4), (3, 2), 2, 2, 3, 4, 2)
    pc = att_covariance(pair, corr)
    assert pc.value == pytest.approx(pc.prefactor * sum(c for _, c in pc.contributions))
    assert pc.time_factor == time_factor(3, 4, 2)


# --- variance -----------------------------------------------------------------

def test_variance_iid_four_cells():
    corr = CorrelationStructure.homogeneous(0.0, 0.0, 0.0)
    c = CohortCounts("T", 1, ("C",), (1,), 1, 1)
    assert att_variance(c, corr) == pytest.approx(4.0)


def test_variance_vanishes_with_perfect_within_person_correlation():
    rho = 1.0 - 1e-13
    corr = CorrelationStructure.homogeneous(rho, 0.3, 0.3)
    c = CohortCounts("T", 5, ("C", "D"), (4, 6), 3, 2)
    assert abs(att_variance(c, corr)) < 1e-11


def test_variance_rejects_empty_cohort():
    corr = CorrelationStructure.homogeneous(0.2, 0.1, 0.0)
    with pytest.raises(ValidationError):
        att_variance(CohortCounts("T", 0, ("C",), (3,), 2, 2), corr)


def test_identical_designs_give_control_variance_component():
    corr = CorrelationStructure.homogeneous(0.5, 0.2, 0.1, 2.0)
    pair = OverlapCounts("G", "G", ("A", "B"), (6, 3), (6, 3), (6, 3), 5, 5, 3, 2, 0)
    A, B = designs_from_counts(pair)
    tr, ctl = variance_terms(pair.cohort_gamma(), corr)
    assert cov_exact_oracle(A, B, corr) == pytest.approx(ctl, rel=1e-12)
    assert att_covariance(pair, corr).value == pytest.approx(ctl, rel=1e-12)
    r = att_correlation(pair, corr)
    assert r == pytest.approx(ctl / (tr + ctl)) and r < 1


def test_disjoint_person_time_independent():
    corr = CorrelationStructure.homogeneous(0.5, 0.0, 0.0)
    A = CohortDesign(3, 3, 2, {"Z": [0, 1, 2]})
    B = CohortDesign(4, 3, 2, {"Z": [3, 4]})
    assert cov_exact_oracle(A, B, corr) == 0.0


def test_exact_oracle_size_guard():
    corr = CorrelationStructure.homogeneous(0.5, 0.0, 0.0)
    A = CohortDesign(50, 50, 50, {"Z": list(range(100))})
    with pytest.raises(SizeGuardError):
        cov_exact_oracle(A, A, corr)


# --- covariance laws ----------------------------------------------------------

@given(overlap_pairs(max_delta=40), structures())
def test_zero_beyond_overlap(pair, corr):
    if pair.delta >= pair.T_pre + pair.T_post:
        assert att_covariance(pair, corr).value == 0.0
        assert cov_component_sum(pair, corr) == 0.0
        assert att_correlation(pair, corr) == 0.0


@given(overlap_pairs(min_shared=1), structures())
def test_sign_follows_time_factor(pair, corr):
    f = time_factor(pair.T_pre, pair.T_post, pair.delta)
    w = att_covariance(pair, corr).value
    bracket = sum(c for _, c in att_covariance(pair, corr).contributions)
    assert bracket > 0
    assert np.sign(w) == np.sign(f)


@given(overlap_pairs(), state_params(), st.floats(0.01, 100.0))
def test_correlation_free_of_sigma2(pair, p, c):
    corr = CorrelationStructure(p)
    assert att_correlation(pair, corr) == pytest.approx(
        att_correlation(pair, corr.scaled(c)), rel=1e-12, abs=1e-15)


def test_zero_shared_and_no_excess_gives_zero():
    corr = CorrelationStructure.homogeneous(0.4, 0.1, 0.1)
    pair = OverlapCounts("G", "N", ("A",), (10,), (12,), (0,), 3, 3, 4, 4, 2)
    assert att_covariance(pair, corr).value == 0.0


def test_correlation_symmetric_in_order():
    corr = CorrelationStructure.homogeneous(0.4, 0.2, 0.05)
    pair = OverlapCounts("G", "N", ("A", "B"), (10, 7), (12, 5), (4, 2), 3, 6, 4, 3, 2)
    assert att_correlation(pair, corr) == pytest.approx(att_correlation(pair.swapped(), corr))


# --- structure ----------------------------------------------------------------

def test_build_sigma_small_cases():
    np.testing.assert_allclose(build_sigma(StateParams(0.5, 0.0, 0.0, 2.0), 1, 2), [[2, 1], [1, 2]])
    np.testing.assert_allclose(build_sigma(StateParams(0.3, 0.3, 0.0), 2, 1), [[1, 0.3], [0.3, 1]])


@given(state_params(), st.integers(1, 4), st.integers(1, 4))
def test_build_sigma_entrywise_rule(p, n, t):
    S = build_sigma(p, n, t)
    for a in range(n * t):
        for b in range(n * t):
            (i, s), (j, u) = divmod(a, t), divmod(b, t)
            if i == j:
                want = 1.0 if s == u else p.rho
            else:
                want = p.phi if s == u else p.psi
            assert S[a, b] == pytest.approx(p.sigma2 * want, abs=1e-12)


def test_build_sigma_size_guard():
    with pytest.raises(SizeGuardError):
        build_sigma(StateParams(0.1, 0.0, 0.0), 101, 100)


def test_validate_structure_examples():
    assert validate_structure(CorrelationStructure.homogeneous(0.6, 0.4, 0.2), 100, 10).ok
    rep = validate_structure({"rho": 0.5, "phi": 0.1, "psi": 0.2}, 5, 5)
    assert not rep.ok and "ordering" in rep.issues[0]


def test_validate_structure_agrees_with_dense_eigensolve():
    corr = CorrelationStructure.homogeneous(0.99, 0.98, 0.0)
    rep = validate_structure(corr, 50, 50)
    dense = np.linalg.eigvalsh(build_sigma(corr, 50, 50)).min()
    assert rep.ok == (dense >= -1e-9)
    assert rep.min_eigenvalue["*"] == pytest.approx(dense, abs=1e-9)
    assert not rep.ok


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 0.95), st.floats(-0.5, 1), st.floats(-0.5, 1),
       st.integers(1, 8), st.integers(1, 8))
def test_validate_structure_matches_dense_minimum(rho, fp, sp, n, t):
    phi = rho * fp
    psi = min(phi, phi * sp) if phi else min(0.0, sp)
    p = StateParams(rho, phi, psi)
    dense_min = min(np.linalg.eigvalsh(build_sigma(p, nn, tt)).min()
                    for nn in range(1, n + 1) for tt in range(1, t + 1))
    rep = validate_structure(CorrelationStructure(p), n, t)
    assert rep.min_eigenvalue["*"] == pytest.approx(dense_min, abs=1e-9)


def test_structure_document_round_trip():
    corr = CorrelationStructure(StateParams(0.4, 0.2, 0.1, 2.0),
                                {"MN": StateParams(0.3, 0.1, 0.0, 1.5)})
    assert CorrelationStructure.from_dict(corr.to_dict()) == corr
    assert not corr.is_homogeneous
    assert corr.params("MN").rho == 0.3 and corr.params("XX").rho == 0.4


def test_state_params_validation():
    with pytest.raises(ValidationError):
        StateParams(1.0, 0.0, 0.0)
    with pytest.raises(ValidationError):
        StateParams(0.2, 0.3, 0.0)
    with pytest.raises(ValidationError):
        StateParams(0.2, 0.1, 0.0, 0.0)
    with pytest.raises(ValidationError):
        StateParams(float("nan"), 0.1, 0.0)
