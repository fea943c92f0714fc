import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcmdp.dp import solve
from rcmdp.errors import InfeasibleThreshold, PolicyInfeasibleAtThreshold
from rcmdp.mdp import HistoryPolicy
from rcmdp.policy import (
    AugmentedPolicy,
    evaluate_augmented,
    evaluate_plan,
    extract_policy,
    feasibility_violations,
    martingale_check,
    risk_to_go_from_policy,
    telescoping_gap,
)
from rcmdp.risk import eval_dynamic_risk
from rcmdp.scenario import RANDOM_MEASURES, random_scenario
from rcmdp.errors import Infeasible

WIN = ("root", "none", "win")
LOSE = ("root", "none", "lose")


def test_save_save_risk_to_go(squander):
    pol = HistoryPolicy.markov(squander.mdp, {"win": "save", "lose": "save"})
    rtg = risk_to_go_from_policy(squander.mdp, squander.risk, pol, 0.3)
    # 0.3 + 0.05 - 0.185 and 0.3 + 0.2 - 0.185
    assert rtg.threshold_at(WIN) == pytest.approx(0.165, abs=1e-12)
    assert rtg.threshold_at(LOSE) == pytest.approx(0.315, abs=1e-12)
    assert martingale_check(squander.mdp, squander.risk, pol, rtg) <= 1e-12
    assert telescoping_gap(rtg, 0.185) <= 1e-12


def test_policy_above_threshold_is_rejected(squander):
    pol = HistoryPolicy.markov(squander.mdp, {"win": "squander", "lose": "squander"})
    with pytest.raises(PolicyInfeasibleAtThreshold):
        risk_to_go_from_policy(squander.mdp, squander.risk, pol, 0.3)


def test_extracted_plan_at_point_three(squander):
    sol = solve(squander.mdp, squander.risk, 0.3)
    policy, rtg = extract_policy(sol)
    assert rtg.nodes[WIN].action == "squander" and rtg.nodes[LOSE].action == "save"
    # The budget 0.3 exceeds the plan risk 0.28; the slack 0.02 is passed on to every successor.
    assert rtg.threshold_at(WIN) == pytest.approx(1.02, abs=1e-12)
    assert rtg.threshold_at(LOSE) == pytest.approx(0.22, abs=1e-12)
    assert evaluate_plan(squander.mdp, squander.risk, rtg) == pytest.approx((-14.0, 0.28), abs=1e-12)
    assert martingale_check(squander.mdp, squander.risk, policy, rtg) <= 1e-12


def test_extraction_from_plan_and_tail_risks_agree(squander):
    sol = solve(squander.mdp, squander.risk, 0.3)
    _, rtg = extract_policy(sol)
    hist = rtg.history_policy()
    thm = risk_to_go_from_policy(squander.mdp, squander.risk, hist, 0.3)
    for h, node in rtg.nodes.items():
        assert thm.threshold_at(h) == pytest.approx(node.threshold, abs=1e-12)


def test_extract_below_floor(squander):
    sol = solve(squander.mdp, squander.risk, 0.3)
    with pytest.raises(InfeasibleThreshold):
        extract_policy(sol, r0=0.1)
    with pytest.raises(InfeasibleThreshold):
        AugmentedPolicy.from_solution(sol).step(1, "lose", 0.1)


def test_augmented_policy_views(squander):
    sol = solve(squander.mdp, squander.risk, 0.3)
    pol = AugmentedPolicy.from_solution(sol)
    assert pol.decision(1, "win", 1.0) == "squander"
    assert pol.decision(1, "win", 0.99) == "save"
    assert pol.threshold_update(1, "win", 0.5) == {"win_save": pytest.approx(0.45)}
    assert pol.increments(1, "win", 0.5) == {"win_save": pytest.approx(-0.05)}
    assert evaluate_augmented(squander.mdp, squander.risk, pol, "win", 0.5, 1) == (-30.0, 0.05)


def test_replay_from_stored_thresholds(squander):
    sol = solve(squander.mdp, squander.risk, 0.3)
    _, rtg = extract_policy(sol)
    replay = AugmentedPolicy.from_risk_to_go(rtg)
    assert replay.decision(1, "win", 1.02) == "squander"
    with pytest.raises(KeyError):
        replay.decision(1, "win", 0.5)


def test_martingale_flags_action_mismatch(squander):
    sol = solve(squander.mdp, squander.risk, 0.3)
    _, rtg = extract_policy(sol)
    other = HistoryPolicy.markov(squander.mdp, {"win": "save", "lose": "save"})
    with pytest.raises(ValueError):
        martingale_check(squander.mdp, squander.risk, other, rtg)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(RANDOM_MEASURES))
def test_extracted_plans_are_feasible_and_telescope(seed, measure):
    scen = random_scenario(seed, measure)
    mdp, spec = scen.mdp, scen.risk
    try:
        sol = solve(mdp, spec, scen.r0)
    except Infeasible:
        return
    policy, rtg = extract_policy(sol)
    j, risk = evaluate_plan(mdp, spec, rtg)
    assert j == pytest.approx(sol.value, abs=1e-9)
    assert risk <= scen.r0 + 1e-9
    assert not feasibility_violations(rtg, sol.bounds.floor)
    assert martingale_check(mdp, spec, policy, rtg) <= 1e-9
    hist = rtg.history_policy()
    assert eval_dynamic_risk(mdp, spec, hist) == pytest.approx(risk, abs=1e-9)
    thm = risk_to_go_from_policy(mdp, spec, hist, scen.r0)
    assert telescoping_gap(thm, risk) <= 1e-9
    assert martingale_check(mdp, spec, hist, thm) <= 1e-9
