import numpy as np
import pandas as pd
import pytest
from scipy import stats

from csicausal.ldag import fixture, project
from csicausal.scm import (
    ByContext,
    Cpt,
    ScmError,
    ScmSpec,
    counterfactual_replay,
    exact_joint,
    oracle_counterfactual_difference,
    oracle_interventional,
    random_discrete_scm,
    simulate_observational,
)
from csicausal.synthetic import toy_scm, expenditure_gamma_scm


@pytest.fixture(scope="module")
def expenditure():
    return expenditure_gamma_scm()


def test_simulation_deterministic(expenditure):
    a = simulate_observational(expenditure, 500, 7).frame
    b = simulate_observational(expenditure, 500, 7).frame
    c = simulate_observational(expenditure, 500, 8).frame
    pd.testing.assert_frame_equal(a, b)
    assert not a.equals(c)
    assert list(a.columns) == sorted(expenditure.ldag.observed) + ["weight"]


def test_single_unit_and_zero_units(expenditure):
    a = simulate_observational(expenditure, 1, 3).frame
    pd.testing.assert_frame_equal(a, simulate_observational(expenditure, 1, 3).frame)
    with pytest.raises(ScmError):
        simulate_observational(expenditure, 0, 3)


def test_latents_hidden_unless_requested(expenditure):
    assert "U1" not in simulate_observational(expenditure, 10, 0).frame
    assert {"U1", "U2"} <= set(simulate_observational(expenditure, 10, 0, include_latent=True).frame)


def test_monte_carlo_matches_exact_joint():
    scm = toy_scm()
    n = 200_000
    f = simulate_observational(scm, n, 11).frame
    joint = exact_joint(scm)
    p = joint.marginal(("M", "X", "Y")).values
    for m in (0, 1):
        for x in (0, 1):
            for y in (0, 1):
                q = p[m, x, y]
                hat = np.mean((f.M == m) & (f.X == x) & (f.Y == y))
                assert abs(hat - q) < 4 * np.sqrt(q * (1 - q) / n)


def test_context_probability(expenditure):
    # P(M=1) from the M mechanism averaged over the uniform country distribution
    p1 = expenditure.mechanisms["M"].pmf({"D": np.arange(8.0)}, 8)[:, 1].mean()
    n = 100_000
    hat = simulate_observational(expenditure, n, 5).frame.M.mean()
    assert abs(hat - p1) < 4 * np.sqrt(p1 * (1 - p1) / n)


def test_exact_joint_normalized():
    g = fixture("expenditure")
    j = exact_joint(random_discrete_scm(g, np.random.default_rng(1)))
    assert j.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert (j.probs > 0).all()


def test_mutilation_cuts_incoming_edges(expenditure):
    mut = oracle_interventional(expenditure, "X", 3)
    assert not [e for e in mut.ldag.edges if e.target == "X"]
    assert {e for e in mut.ldag.edges if e.source == "X"} == {e for e in expenditure.ldag.edges if e.source == "X"}
    assert (simulate_observational(mut, 200, 0).frame.X == 3).all()
    with pytest.raises(ScmError):
        oracle_interventional(expenditure, "X", 99)


def test_zero_step_counterfactual_is_zero(expenditure):
    est = oracle_counterfactual_difference(expenditure, "X", 2, "M", 0, 5000, 1, step=0)
    assert est.estimate == 0.0 and est.se == 0.0


def test_null_effect_gives_zero_difference():
    scm = expenditure_gamma_scm(effect0=0.0, effect1=0.0)
    est = oracle_counterfactual_difference(scm, "X", 2, "M", 0, 5000, 1)
    assert est.estimate == pytest.approx(0.0, abs=1e-9)


def test_gamma_counterfactual_ratio_closed_form(expenditure):
    # at M=0 nothing between X and Y depends on X, so each unit's outcome scales by exp(a * zeta_x)
    zeta = expenditure.mechanisms["Y"].branches["0"].log_mean.mo_simplex
    a = expenditure.mechanisms["Y"].branches["0"].log_mean.mo_coef
    for x in (1, 2, 3):
        fact, cf = counterfactual_replay(expenditure, "X", x + 1, 20_000, 4,
                                         lambda v, x=x: (v["X"] == x) & (v["M"] == 0))
        assert np.allclose(cf["Y"] / fact["Y"], np.exp(a * zeta[x - 1]), rtol=1e-12)
        est = oracle_counterfactual_difference(expenditure, "X", x, "M", 0, 20_000, 4)
        expected = (np.exp(a * zeta[x - 1]) - 1) * fact["Y"].mean()
        assert est.estimate == pytest.approx(expected, rel=1e-12)


def test_work_context_mediators_respond(expenditure):
    fact, cf = counterfactual_replay(expenditure, "X", 3, 5000, 2, lambda v: (v["X"] == 2) & (v["M"] == 1))
    assert np.all(cf["Z"] > fact["Z"])
    fact0, cf0 = counterfactual_replay(expenditure, "X", 3, 5000, 2, lambda v: (v["X"] == 2) & (v["M"] == 0))
    assert np.array_equal(cf0["Z"], fact0["Z"]) and np.array_equal(cf0["W"], fact0["W"])


def test_context_specific_independence_in_samples():
    scm = toy_scm()
    f = simulate_observational(scm, 50_000, 21, include_latent=True).frame
    for u in (0, 1):
        s = f[(f.M == 0) & (f.U == u)]
        assert stats.chi2_contingency(pd.crosstab(s.X, s.Z))[1] > 0.01
        s = f[(f.M == 1) & (f.U == u)]
        assert stats.chi2_contingency(pd.crosstab(s.X, s.Z))[1] < 0.001


def test_absent_parent_values_are_ignored():
    scm = toy_scm()
    rng = np.random.default_rng(0)
    n = 1000
    pv = {"M": np.zeros(n), "X": rng.integers(0, 2, n).astype(float), "U": rng.integers(0, 2, n).astype(float)}
    u = rng.random(n)
    base = scm.mechanisms["Z"].sample(pv, u)
    pv["X"] = rng.permutation(pv["X"])
    assert np.array_equal(base, scm.mechanisms["Z"].sample(pv, u))


def test_random_scm_honours_labels():
    g = fixture("expenditure")
    scm = random_discrete_scm(g, np.random.default_rng(0))
    for m in ("0", "1"):
        dag = project(g, {"M": m})
        for v, mech in scm.mechanisms.items():
            if isinstance(mech, ByContext):
                present = {a for a, b in dag.edges if b == v} - {"M"}
                assert set(mech.branches[m].parents) <= present


def test_mechanism_reading_non_parent_rejected():
    scm = toy_scm()
    mechs = dict(scm.mechanisms)
    mechs["U"] = Cpt((0, 1), ("Y",), ((0, 1),), [[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(ScmError, match="non-parents"):
        ScmSpec(scm.ldag, mechs)


def test_empty_stratum_raises(expenditure):
    with pytest.raises(ScmError, match="no units"):
        counterfactual_replay(expenditure, "X", 2, 50, 0, lambda v: np.zeros(len(v["X"]), bool))
    with pytest.raises(ScmError, match="outside"):
        oracle_counterfactual_difference(expenditure, "X", 8, "M", 0, 50, 0)


def test_scm_json_round_trip(expenditure):
    back = ScmSpec.from_dict(expenditure.to_dict())
    assert back.digest() == expenditure.digest()
    pd.testing.assert_frame_equal(simulate_observational(back, 300, 9).frame,
                                  simulate_observational(expenditure, 300, 9).frame)
