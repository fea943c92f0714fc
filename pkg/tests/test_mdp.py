import copy
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcmdp.errors import (
    EmptyAdmissibleSet,
    MissingField,
    PolicyUndefinedOnHistory,
    ProbabilityRowNotNormalized,
    StateUnknown,
    UndefinedCost,
    UnknownField,
)
from rcmdp.mdp import History, HistoryPolicy, enumerate_histories, mdp_to_document, policy_tree, validate_scenario
from rcmdp.scenario import random_scenario, squander_save


@pytest.fixture
def doc():
    return squander_save().to_document()


def test_valid_document_builds_mdp(doc):
    mdp = validate_scenario(doc)
    assert mdp.horizon == 2
    assert mdp.initial_state == "root"
    assert mdp.admissible["win"] == ("save", "squander")
    assert mdp.successors("root", "none") == (("lose", 0.9), ("win", 0.1))
    assert mdp.c("win", "squander") == -50 and mdp.d("win", "squander") == 1


def test_document_round_trip(doc):
    mdp = validate_scenario(doc)
    again = validate_scenario({**doc, **mdp_to_document(mdp)})
    assert again == mdp


def test_row_sum_error_reports_the_pair(doc):
    doc["transitions"] = [t for t in doc["transitions"] if not (t["from"] == "root" and t["to"] == "lose")]
    with pytest.raises(ProbabilityRowNotNormalized) as err:
        validate_scenario(doc)
    assert (err.value.state, err.value.action) == ("root", "none")
    assert err.value.total == pytest.approx(0.1)


def test_row_off_by_small_amount_rejected(doc):
    for t in doc["transitions"]:
        if t["from"] == "root" and t["to"] == "win":
            t["prob"] = 0.1 + 1e-6
    with pytest.raises(ProbabilityRowNotNormalized):
        validate_scenario(doc)


@pytest.mark.parametrize("key", ["horizon", "states", "actions", "transitions", "cost_c", "cost_d"])
def test_missing_required_key(doc, key):
    del doc[key]
    with pytest.raises(MissingField):
        validate_scenario(doc)


def test_unknown_key(doc):
    doc["discount"] = 0.9
    with pytest.raises(UnknownField):
        validate_scenario(doc)


def test_empty_admissible_set(doc):
    doc["actions"]["win"] = []
    with pytest.raises(EmptyAdmissibleSet):
        validate_scenario(doc)


def test_undefined_cost(doc):
    doc["cost_d"] = [r for r in doc["cost_d"] if r["state"] != "lose"]
    with pytest.raises(UndefinedCost):
        validate_scenario(doc)


def test_transition_to_unknown_state(doc):
    doc["transitions"].append({"from": "win", "action": "save", "to": "moon", "prob": 0.0})
    with pytest.raises(StateUnknown):
        validate_scenario(doc)


def test_zero_probability_successor_is_dropped(doc):
    doc["transitions"].append({"from": "win", "action": "save", "to": "lose", "prob": 0.0})
    mdp = validate_scenario(doc)
    assert mdp.successors("win", "save") == (("win_save", 1.0),)


def test_validation_does_not_mutate_input(doc):
    before = copy.deepcopy(doc)
    validate_scenario(doc)
    assert doc == before


def test_check_state(squander):
    with pytest.raises(StateUnknown, match="moon"):
        squander.mdp.check_state("moon")


def test_enumerate_histories_without_policy_branches_every_action(squander):
    # 2 outcomes at the root, 2 actions each, one successor per action.
    hs = enumerate_histories(squander.mdp, "root")
    assert len(hs) == 4
    assert sum(h.probability for h in hs) == pytest.approx(2.0)  # one unit of mass per action branch at stage 1
    assert {str(h.history) for h in hs} == {
        "root>none>win>squander>win_squander", "root>none>win>save>win_save",
        "root>none>lose>squander>lose_squander", "root>none>lose>save>lose_save",
    }


def test_enumerate_histories_with_policy(squander):
    pol = HistoryPolicy.markov(squander.mdp, {"win": "save", "lose": "squander"})
    hs = enumerate_histories(squander.mdp, "root", policy=pol)
    assert sorted((str(h.history), h.probability) for h in hs) == [
        ("root>none>lose>squander>lose_squander", 0.9),
        ("root>none>win>save>win_save", 0.1),
    ]


def test_enumerate_histories_at_horizon_is_trivial(squander):
    hs = enumerate_histories(squander.mdp, "win_save", 2)
    assert len(hs) == 1 and hs[0].probability == 1.0


def test_history_accessors():
    h = History(("a",), 1).extend("u", "b").extend("v", "c")
    assert h.stage == 3 and h.state == "c"
    assert h.states == ("a", "b", "c") and h.actions == ("u", "v")
    assert str(h) == "a>u>b>v>c"


def test_policy_undefined_on_history(squander):
    pol = HistoryPolicy({("root",): "none"})
    with pytest.raises(PolicyUndefinedOnHistory):
        policy_tree(squander.mdp, pol, "root")


def test_policy_with_inadmissible_action(squander):
    pol = HistoryPolicy.markov(squander.mdp, {"win": "fly", "lose": "save"})
    with pytest.raises(PolicyUndefinedOnHistory, match="not admissible"):
        policy_tree(squander.mdp, pol, "root")


def test_markov_policy_accepts_stage_keys(squander):
    pol = HistoryPolicy.markov(squander.mdp, {(1, "win"): "save", "win": "squander", "lose": "save"})
    tree = policy_tree(squander.mdp, pol, "root")
    actions = {n.state: n.action for n in tree.walk()}
    assert actions["win"] == "save"


def test_from_tree_reproduces_decisions(squander):
    tree = ("none", (("lose", ("save", (("lose_save", None),))), ("win", ("squander", (("win_squander", None),)))))
    pol = HistoryPolicy.from_tree(tree, "root")
    assert pol(History(("root", "none", "win"))) == "squander"
    assert pol(History(("root", "none", "lose"))) == "save"


def test_row_summing_to_097_rejected(doc):
    for t in doc["transitions"]:
        if t["from"] == "root" and t["to"] == "lose":
            t["prob"] = 0.87
    with pytest.raises(ProbabilityRowNotNormalized, match="0.97"):
        validate_scenario(doc)


def test_degenerate_chain_has_one_history(trivial):
    (h,) = enumerate_histories(trivial.mdp, "x")
    assert h.probability == 1.0 and str(h.history) == "x>stay>x"


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_history_mass_sums_to_one_under_any_policy(seed, pick):
    scen = random_scenario(seed)
    mdp = scen.mdp

    def rule(h):
        acts = mdp.admissible[h.state]
        return acts[(pick + sum(map(len, h.entries))) % len(acts)]

    hs = enumerate_histories(mdp, mdp.initial_state, 0, HistoryPolicy(rule))
    assert math.fsum(w.probability for w in hs) == pytest.approx(1.0, abs=1e-9)
    assert all(w.history.stage == mdp.horizon for w in hs)
