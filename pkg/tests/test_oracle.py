import itertools

import numpy as np
import pytest

from rcmdp.errors import Infeasible, TooLarge
from rcmdp.mdp import History, HistoryPolicy, enumerate_histories
from rcmdp.oracle import brute_force_opt, brute_force_tail, count_policies, enumerate_policies
from rcmdp.risk import eval_dynamic_risk
from rcmdp.scenario import random_scenario


def test_squander_save_optimum(squander):
    res = brute_force_opt(squander.mdp, squander.risk, None, 0.3, with_table=True)
    assert res.value == -14.0
    assert res.count == 4
    assert res.risk_floor == pytest.approx(0.185)
    assert len(res.minimizers) == 1
    best = res.minimizers[0]
    assert best(History(("root", "none", "win"))) == "squander"
    assert best(History(("root", "none", "lose"))) == "save"
    assert sorted((c, round(r, 12)) for _, c, r in res.table) == [(-23, 0.46), (-21, 0.365), (-14, 0.28), (-12, 0.185)]


@pytest.mark.parametrize("state,stage,r,value", [("win", 1, 1.02, -50.0), ("lose", 1, 0.22, -10.0),
                                                 ("win", 1, 0.3, -30.0), ("lose", 1, 0.4, -20.0)])
def test_tail_optimum(squander, state, stage, r, value):
    assert brute_force_tail(squander.mdp, squander.risk, state, stage, r).value == value


def test_infeasible_reports_floor(squander):
    with pytest.raises(Infeasible) as err:
        brute_force_opt(squander.mdp, squander.risk, None, 0.1)
    assert err.value.floor == pytest.approx(0.185)


def test_too_large(squander):
    with pytest.raises(TooLarge):
        brute_force_opt(squander.mdp, squander.risk, None, 0.3, limit=3)


def test_tail_at_horizon(squander):
    res = brute_force_tail(squander.mdp, squander.risk, "win_save", 2, 0.0)
    assert res.value == 0.0 and res.count == 1


def test_ties_report_every_minimizer():
    from rcmdp.scenario import build_scenario
    scen = build_scenario("tie", ["x", "t"], {"x": ["a", "b"], "t": ["stay"]},
                  {("x", "a"): {"t": 1.0}, ("x", "b"): {"t": 1.0}, ("t", "stay"): {"t": 1.0}},
                  {("x", "a"): (1.0, 0.5), ("x", "b"): (1.0, 0.5), ("t", "stay"): (0.0, 0.0)},
                  1, {"kind": "expectation"}, 1.0)
    res = brute_force_opt(scen.mdp, scen.risk, "x", 1.0)
    assert res.value == 1.0
    assert res.first_actions == {"a", "b"} and len(res.minimizers) == 2


def test_enumeration_count_matches_generator():
    for seed in range(20):
        scen = random_scenario(seed)
        trees = list(enumerate_policies(scen.mdp, scen.mdp.initial_state))
        assert len(trees) == count_policies(scen.mdp, scen.mdp.initial_state)
        assert len({repr(t) for t in trees}) == len(trees)


def _full_product_optimum(mdp, spec, r0):
    """Independent reference: deterministic Markov-in-(stage, state) policies over the full product.

    Only used where it provably coincides with the history-dependent optimum
    (each stage-state pair is reached along at most one history).
    """
    keys = [(k, x) for k in range(mdp.horizon) for x in mdp.states]
    best = np.inf
    for combo in itertools.product(*[mdp.admissible[x] for _, x in keys]):
        choice = dict(zip(keys, combo))
        pol = HistoryPolicy(lambda h, c=choice: c[(h.stage, h.state)])
        if eval_dynamic_risk(mdp, spec, pol) > r0 + 1e-9:
            continue
        cost = sum(w.probability * sum(mdp.c(x, u) for x, u in zip(w.history.states, w.history.actions))
                   for w in enumerate_histories(mdp, mdp.initial_state, 0, pol))
        best = min(best, cost)
    return best


def test_oracle_matches_full_product_on_tree_fixture(squander):
    for r0 in (0.185, 0.3, 0.4, 1.0):
        assert brute_force_opt(squander.mdp, squander.risk, None, r0).value == pytest.approx(
            _full_product_optimum(squander.mdp, squander.risk, r0), abs=1e-12)
