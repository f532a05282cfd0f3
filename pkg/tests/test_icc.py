import numpy as np
import pytest

from stackdid.errors import ValidationError
from stackdid.icc import estimate_icc, estimate_icc_resampled, subsample_balanced
from stackdid.panel import CohortSpec, build_cohort
from stackdid.simulate import SimConfig, simulate_panel

from helpers import toy_panel


def _cfg(P, seed, rho=0.6, phi=0.4, psi=0.2, **kw):
    return SimConfig(T_pre=5, T_post=5, delta=0, shared_fraction=1.0, rho=rho, phi=phi,
                     psi=psi, n_treated_states=1, n_control_states=2,
                     persons_per_state=P, seed=seed, **kw)


def _noise_panel(rng, states=3, persons=40, T=6, fn=None):
    rows = []
    for s in range(states):
        for i in range(persons):
            b = rng.normal()
            for t in range(T):
                y = fn(b, rng) if fn else rng.normal()
                rows.append((f"S{s}", f"{s}-{i}", t, y))
    return toy_panel(rows, {f"S{s}": None for s in range(states)})


def test_iid_noise_gives_zero_correlations():
    p = _noise_panel(np.random.default_rng(1), persons=200, T=8)
    e = estimate_icc(p)
    assert e.rho == pytest.approx(0, abs=0.03)
    assert e.phi == pytest.approx(0, abs=0.03)
    assert e.psi == pytest.approx(0, abs=0.03)
    assert e.sigma2 == pytest.approx(1, abs=0.05)


def test_pure_person_effects():
    p = _noise_panel(np.random.default_rng(2), persons=300, fn=lambda b, rng: b)
    e = estimate_icc(p)
    assert e.rho == pytest.approx(1.0, abs=1e-9)
    assert e.phi == pytest.approx(0, abs=0.02) and e.psi == pytest.approx(0, abs=0.02)


def test_scale_equivariance():
    p = simulate_panel(_cfg(30, 3))
    a = estimate_icc(p)
    b = estimate_icc(p.with_outcomes(p.outcomes * 3.0))
    assert b.sigma2 == pytest.approx(9 * a.sigma2, rel=1e-10)
    for k in ("rho", "phi", "psi"):
        assert getattr(b, k) == pytest.approx(getattr(a, k), rel=1e-9, abs=1e-12)


def test_recovery_rough():
    # three states leave the unit-level components noisy; this is a smoke
    # check, the tight recovery check lives in the acceptance suite
    ests = [estimate_icc(simulate_panel(_cfg(200, s))) for s in range(5)]
    assert all(e.feasible for e in ests)
    mean = np.mean([(e.rho, e.phi, e.psi) for e in ests], axis=0)
    assert mean == pytest.approx((0.6, 0.4, 0.2), abs=0.1)


def test_ordering_preserved_across_seeds():
    ok = 0
    for seed in range(20):
        e = estimate_icc(simulate_panel(_cfg(500, seed)))
        ok += e.rho > e.phi > e.psi
    assert ok / 20 >= 0.95


def test_error_shrinks_with_persons():
    # person-level components only: sampling error is driven by persons
    truth = np.array([0.5, 0.0, 0.0])
    mae = {}
    for P in (100, 1000):
        errs = [np.abs(np.array(_est(simulate_panel(_cfg(P, s, 0.5, 0.0, 0.0)))) - truth)
                for s in range(10)]
        mae[P] = np.mean(errs, axis=0)
    assert np.all(mae[1000] <= mae[100])


def _est(p):
    e = estimate_icc(p)
    return e.rho, e.phi, e.psi


def test_treatment_effect_absorbed():
    kw = dict(T_pre=3, T_post=3, delta=2, shared_fraction=0.5, rho=0.5, phi=0.2,
              psi=0.1, persons_per_state=30, seed=1)
    specs = [CohortSpec("T0", 3, 3, 3), CohortSpec("T1", 5, 3, 3)]
    out = []
    for beta2 in (0.0, 4.0):
        p = simulate_panel(SimConfig(beta2=beta2, **kw))
        out.append(_est_cohorts(p, [build_cohort(p, s) for s in specs]))
    assert out[1] == pytest.approx(out[0], rel=1e-9)


def _est_cohorts(p, cohorts):
    e = estimate_icc(p, cohorts)
    return e.rho, e.phi, e.psi, e.sigma2


def test_unavailable_component():
    rows = []
    for s in ("A", "B"):
        rows += [(s, f"{s}1", t, float(t * t)) for t in (0, 1)]
        rows += [(s, f"{s}2", t, float(3 - t) ** 3) for t in (2, 3)]
    e = estimate_icc(toy_panel(rows, {"A": None, "B": None}))
    assert "phi" in e.unavailable and np.isnan(e.phi)
    assert e.to_dict()["phi"] is None


def test_input_checks():
    with pytest.raises(ValidationError):
        estimate_icc(toy_panel([], {}))
    rows = [("A", "a", 0, 1.0), ("A", "b", 0, 2.0)]
    with pytest.raises(ValidationError):
        estimate_icc(toy_panel(rows, {"A": None}))


def test_clamp_flag():
    rng = np.random.default_rng(0)
    for _ in range(200):
        rows = []
        for s in "AB":
            for i in range(2):
                v = rng.normal(size=3)
                rows += [(s, f"{s}{i}", t, v[t]) for t in range(3)]
        p = toy_panel(rows, {"A": None, "B": None})
        raw = estimate_icc(p)
        if not raw.feasible and raw.sigma2 > 0:
            break
    else:
        pytest.fail("no infeasible small panel found")
    cl = estimate_icc(p, clamp=True)
    assert not raw.clamped and cl.clamped
    for k in ("rho", "phi", "psi"):
        assert -0.5 <= getattr(cl, k) < 1.0


# --- subsampling ----------------------------------------------------------

def test_fraction_one_is_identity():
    p = simulate_panel(_cfg(20, 0))
    (sub,) = subsample_balanced(p, 1.0, 1, seed=3)
    assert sub.presence == p.presence
    np.testing.assert_array_equal(np.sort(sub.outcomes), np.sort(p.outcomes))
    direct = estimate_icc(p)
    res = estimate_icc_resampled(p, None, 1.0, 1, 3)
    assert (res.rho, res.phi, res.psi) == pytest.approx((direct.rho, direct.phi, direct.psi), rel=1e-12)


def test_same_seed_same_membership():
    p = simulate_panel(_cfg(50, 0))
    a = subsample_balanced(p, 0.3, 3, seed=8)
    b = subsample_balanced(p, 0.3, 3, seed=8)
    assert [s.presence for s in a] == [s.presence for s in b]
    assert a[0].presence != a[1].presence


def test_balanced_quota():
    rows = []
    for s, n in (("A", 100), ("B", 200), ("C", 300)):
        rows += [(s, f"{s}{i}", t, 0.0) for i in range(n) for t in range(2)]
    p = toy_panel(rows, {"A": None, "B": None, "C": None})
    (sub,) = subsample_balanced(p, 0.1, 1, seed=0)
    counts = {u: len(sub.individuals_in(u)) for u in "ABC"}
    assert counts == {"A": 10, "B": 10, "C": 10}
    with pytest.raises(ValidationError):
        subsample_balanced(p, 0.015, 1, seed=0)
    with pytest.raises(ValidationError):
        subsample_balanced(p, 0.0, 1, seed=0)


def test_resampled_average_of_correlations():
    p = simulate_panel(_cfg(60, 2))
    res = estimate_icc_resampled(p, None, 0.5, 4, seed=1)
    assert res.resample_meta == {"n_resamples": 4, "fraction": 0.5, "seed": 1}
    assert res.rho == pytest.approx(np.mean([e.rho for e in res.per_resample]))
