import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from csicausal.functional import (
    Atomic,
    Product,
    SumOver,
    evaluate,
    evaluate_factor,
    from_dict,
    simplify,
    to_dict,
    to_json,
    to_text,
)
from csicausal.graph import Admg, Dag, d_separated, latent_project
from csicausal.identify import (
    CAVEAT,
    ContextDescendantError,
    IdentificationError,
    check_conditioned_counterfactual,
    combine_contexts,
    counterfactual_functional,
    id_effect,
    identify_context_effect,
)
from csicausal.ldag import fixture, parse_ldag, project
from csicausal.scm import exact_joint, random_discrete_scm

from oracles import conditional_mean, do_truth, toy_formula_long, toy_formula_short, table
from strategies import ldags


def test_toy_unlabelled_not_identified():
    g = fixture("toy_unlabelled")
    adm = latent_project(g.full_dag(), g.observed)
    assert adm.has_bidirected("X", "Z")
    res = id_effect(adm, "X", {"Y"})
    assert not res.identified
    assert "X" in res.witness and "Z" in res.witness


def test_toy_labelled_m1_identified_and_matches_front_door_sum():
    g = fixture("toy_labelled")
    dag = project(g, {"M": "1"})
    res = id_effect(latent_project(dag, g.observed), "X", {"Y"})
    assert res.identified
    rng = np.random.default_rng(0)
    scm = random_discrete_scm(g, rng)
    joint = exact_joint(scm).restrict(g.observed)
    expected = SumOver(("Z",), Product((Atomic(("Z",), ("X", "M"), {"M": "1"}),
                                        Atomic(("Y",), ("X", "Z", "M"), {"M": "1"}))))
    # P(Y | do X) in the M=1 graph where M is a root confounder: compare against p(Y|do X, M=1)
    truth = do_truth(scm, "X", "Y", "M", 1)
    got = table(expected, joint, "X", "Y")
    assert np.allclose(got, truth, atol=1e-12)
    assert res.functional is not None


def test_chain_truncated_product():
    adm = Admg(("X", "Z", "Y"), {("X", "Z"), ("Z", "Y")})
    res = id_effect(adm, "X", {"Y"})
    assert res.identified
    assert set(res.functional.free()) == {"X", "Y"}


@pytest.mark.parametrize("m, expected", [("0", {"C", "S", "Z", "W", "D"}), ("1", {"C", "S", "D"})])
def test_expenditure_adjustment_sets(m, expected):
    res = identify_context_effect(fixture("expenditure"), "X", "Y", {"M": m})
    assert res.identified
    assert res.adjustment_set == expected


def test_expenditure_income_not_identified_with_witness():
    for m in ("0", "1"):
        res = identify_context_effect(fixture("expenditure_income"), "X", "Y", {"M": m})
        assert not res.identified
        assert "I" in res.witness and "X <-> Y" in res.witness


def test_all_contexts_dag_not_identified():
    g = fixture("expenditure").erase_labels()
    for m in ("0", "1"):
        assert not identify_context_effect(g, "X", "Y", {"M": m}).identified


def test_context_descendant_of_treatment_rejected():
    g = parse_ldag("graph g { context M in {0,1}; node X; node Y; node Z; X -> M; M -> Y; X -> Y;"
                   " Z -> Y [absent: M=0] }")
    with pytest.raises(ContextDescendantError):
        identify_context_effect(g, "X", "Y", {"M": "0"})
    with pytest.raises(ContextDescendantError) as exc:
        combine_contexts(g, "X", "Y", "M")
    assert CAVEAT in str(exc.value)


def test_treatment_must_be_observed():
    with pytest.raises(IdentificationError):
        identify_context_effect(fixture("toy_labelled"), "U", "Y", {"M": "0"})


@pytest.mark.parametrize("seed", range(10))
def test_toy_formulas_and_combine_match_truth(seed):
    g = fixture("toy_labelled")
    scm = random_discrete_scm(g, np.random.default_rng(seed))
    joint = exact_joint(scm).restrict(g.observed)
    truth = do_truth(scm, "X", "Y")
    combined = combine_contexts(g, "X", "Y", "M").functional
    for expr in (toy_formula_long(), toy_formula_short(), simplify(toy_formula_long()), combined, simplify(combined)):
        assert np.allclose(table(expr, joint, "X", "Y"), truth, atol=1e-10, rtol=0)


def test_simplify_long_m1_arm_gives_short_arm():
    arm = SumOver(("Z",), Product((Atomic(("Y",), ("X", "Z", "M")), Atomic(("Z",), ("X", "M")))))
    assert simplify(arm) == Atomic(("Y",), ("X", "M"))


def test_simplify_fixpoint_when_nothing_to_eliminate():
    expr = Product((Atomic(("Y",), ("X", "M")), Atomic(("M",))))
    assert simplify(expr) == expr
    # the Z-sum cannot be removed; only the constant p(M) may be hoisted out
    arm0 = toy_formula_short().arms[0][1]
    text = to_text(simplify(arm0))
    assert "\\sum_{Z}" in text and "p(Z|M)" in text


@pytest.mark.parametrize("seed", range(10))
def test_expenditure_work_arm_simplifies_to_short_form(seed):
    g = fixture("expenditure")
    scm = random_discrete_scm(g, np.random.default_rng(100 + seed))
    joint = exact_joint(scm).restrict(g.observed)
    pin = {"M": "1"}
    s0 = ("C", "S", "Z", "W", "D")
    long = Product((Atomic(("M",), (), pin), SumOver(s0, Product((
        Atomic(("Y",), ("X",) + s0 + ("M",), pin),
        Atomic(("W",), ("X", "C", "S", "Z", "D", "M"), pin),
        Atomic(("Z",), ("X", "C", "S", "D", "M"), pin),
        Atomic(("C", "S", "D"), ("M",), pin),
    )))))
    short = identify_context_effect(g, "X", "Y", pin).functional.numerator
    s = simplify(long)
    for expr in (long, s):
        assert np.allclose(evaluate_factor(expr, joint).aligned(("X", "Y")),
                           evaluate_factor(short, joint).aligned(("X", "Y")), atol=1e-10, rtol=0)
    assert "W" not in to_text(s) and "Z" not in to_text(s)


@pytest.mark.parametrize("seed", range(5))
def test_expenditure_combined_matches_truth(seed):
    g = fixture("expenditure")
    scm = random_discrete_scm(g, np.random.default_rng(200 + seed))
    joint = exact_joint(scm).restrict(g.observed)
    res = combine_contexts(g, "X", "Y", "M")
    assert res.identified
    assert np.allclose(table(res.functional, joint, "X", "Y"), do_truth(scm, "X", "Y"), atol=1e-10, rtol=0)
    for m in ("0", "1"):
        f = identify_context_effect(g, "X", "Y", {"M": m}).functional
        got = table(f, joint, "X", "Y")
        assert np.allclose(got, do_truth(scm, "X", "Y", "M", int(m)), atol=1e-10, rtol=0)
        assert np.allclose(got.sum(axis=1), 1.0, atol=1e-10)


def test_no_labels_no_latents_collapses_to_truncated_factorization():
    g = parse_ldag("graph g { node A; node X; node Y; A -> X; A -> Y; X -> Y }")
    scm = random_discrete_scm(g, np.random.default_rng(3))
    joint = exact_joint(scm)
    res = combine_contexts(g, "X", "Y", None)
    assert res.identified
    assert np.allclose(table(res.functional, joint, "X", "Y"), do_truth(scm, "X", "Y"), atol=1e-12)


@given(ldags(), st.data())
def test_context_identification_sound_on_random_ldags(g, data):
    obs = sorted(g.observed - {"M"})
    X, Y = data.draw(st.sampled_from([(a, b) for a in obs for b in obs if a < b]))
    m = data.draw(st.sampled_from(["0", "1"]))
    dag = project(g, {"M": m})
    assume("M" not in dag.descendants({X}))
    res = identify_context_effect(g, X, Y, {"M": m})
    assume(res.identified)
    seed = data.draw(st.integers(0, 2**31))
    scm = random_discrete_scm(g, np.random.default_rng(seed))
    joint = exact_joint(scm).restrict(g.observed)
    got = table(res.functional, joint, X, Y)
    assert np.allclose(got, do_truth(scm, X, Y, "M", int(m)), atol=1e-10, rtol=0)
    if res.adjustment_set is not None:
        # backdoor criterion checked independently
        assert not (res.adjustment_set & dag.descendants({X}))
        cut = Dag(dag.nodes, frozenset(e for e in dag.edges if e[0] != X))
        assert d_separated(cut, {X}, {Y}, set(res.adjustment_set) | {"M"})


@pytest.mark.parametrize("seed", range(5))
def test_counterfactual_factual_collapse(seed):
    g = fixture("expenditure")
    scm = random_discrete_scm(g, np.random.default_rng(300 + seed))
    joint = exact_joint(scm).restrict(g.observed)
    for m in ("0", "1"):
        for x in ("0", "1"):
            res = counterfactual_functional(g, "X", "Y", {"M": m}, x, x)
            assert evaluate(res.functional, joint) == pytest.approx(
                conditional_mean(joint, "Y", {"X": x, "M": m}), abs=1e-10)


def test_counterfactual_uses_factual_covariates_and_cf_outcome():
    g = fixture("expenditure")
    res = counterfactual_functional(g, "X", "Y", {"M": "0"}, "1", "2")
    assert res.adjustment_set == {"C", "S", "Z", "W", "D"}
    text = to_text(res.functional)
    assert "X=1" in text and "X=2" in text
    res1 = counterfactual_functional(g, "X", "Y", {"M": "1"}, "1", "2")
    assert res1.adjustment_set == {"C", "S", "D"}


def test_counterfactual_propagates_failure():
    res = counterfactual_functional(fixture("expenditure_income"), "X", "Y", {"M": "0"}, "1", "2")
    assert not res.identified


@pytest.mark.parametrize("name", ["expenditure", "toy_labelled", "expenditure_income"])
def test_conditioned_counterfactual_rejected(name):
    for m in ("0", "1"):
        res = check_conditioned_counterfactual(fixture(name), "X", "Y", {"M": m})
        assert not res.identified and res.witness


def test_functional_serialization_round_trip():
    f = combine_contexts(fixture("expenditure"), "X", "Y", "M").functional
    assert from_dict(to_dict(f)) == f
    assert to_json(f) == to_json(from_dict(to_dict(f)))
    assert to_text(f) == to_text(from_dict(to_dict(f)))


def test_probability_normalizes():
    g = fixture("toy_labelled")
    joint = exact_joint(random_discrete_scm(g, np.random.default_rng(9))).restrict(g.observed)
    total = sum(evaluate(Atomic(("Y",)), joint, {"Y": y}) for y in ("0", "1"))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_evaluate_zero_division_names_event():
    from csicausal.functional import EvaluationError, JointTable

    j = JointTable(("A", "B"), {"A": (0, 1), "B": (0, 1)}, np.array([[0.5, 0.5], [0.0, 0.0]]))
    with pytest.raises(EvaluationError, match="A"):
        evaluate(Atomic(("B",), ("A",)), j, {"A": 1, "B": 0})
