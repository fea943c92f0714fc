"""Time-consistency audits, the constant-threshold baseline, demos and rollouts."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .dp import Solution, backward_induction
from .mdp import HistoryPolicy, Mdp, PolicyNode, policy_tree
from .oracle import brute_force_opt
from .policy import AugmentedPolicy, RiskToGoMap, augmented_tree, evaluate_plan
from .risk import CVaR, RiskMeasureSpec, eval_dynamic_risk, node_risks, static_avar_of_total_cost, static_variance_of_constraint_cost
from .scenario import Scenario, avar_instance, variance_instance
from .staircase import INF, TOL


@dataclass(frozen=True)
class AuditNode:
    stage: int
    state: str
    history: str
    threshold: float
    tail_resolve_value: float
    planned_tail_value: float
    planned_tail_risk: float
    action_planned: str
    actions_resolved: frozenset[str]
    consistent: bool
    on_path: bool = True


@dataclass(frozen=True)
class AuditReport:
    label: str
    nodes: tuple[AuditNode, ...]

    @property
    def overall(self) -> bool:
        return all(n.consistent for n in self.nodes)

    def inconsistent(self) -> list[AuditNode]:
        return [n for n in self.nodes if not n.consistent]


def _judge(resolved: float, planned: float, planned_risk: float, r: float, action: str,
           optimal: frozenset[str]) -> bool:
    if not math.isfinite(resolved):
        return False
    return abs(resolved - planned) <= TOL and planned_risk <= r + TOL and action in optimal


def audit(mdp: Mdp, spec: RiskMeasureSpec, solution: Solution, policy: AugmentedPolicy, rtg: RiskToGoMap,
          all_breakpoints: bool = False) -> AuditReport:
    """Re-solve the tail problem at every reachable ``(k, x_k, r_k)`` and compare.

    Tail problems are solved by a fresh backward induction, not read from
    ``solution``. With ``all_breakpoints`` every breakpoint of every stage
    value function is audited as well.
    """
    fresh = backward_induction(mdp, spec)
    nodes = []

    def check(k: int, x: str, r: float, hist: str, on_path: bool) -> None:
        backup = fresh[k][x]
        plan = augmented_tree(mdp, policy, x, r, k)
        j, risk = evaluate_plan(mdp, spec, plan)
        optimal = backup.optimal_actions(r)
        u = plan.root_node.action
        v = backup.value(r)
        nodes.append(AuditNode(k, x, hist, r, v, j, risk, u, optimal,
                               _judge(v, j, risk, r, u, optimal), on_path))

    for node in sorted(rtg.nodes.values(), key=lambda n: (n.history.stage, n.history.entries)):
        if node.action is not None:
            check(node.history.stage, node.history.state, node.threshold, str(node.history), True)
    if all_breakpoints:
        for k in range(mdp.horizon):
            for x in mdp.states:
                for b in solution.value_function(k, x).breakpoints:
                    check(k, x, b, f"{x}@{k}", False)
    return AuditReport("augmented plan", tuple(nodes))


def _node_costs(mdp: Mdp, tree: PolicyNode) -> dict[tuple[str, ...], float]:
    out = {}

    def rec(node: PolicyNode) -> float:
        if node.action is None:
            j = 0.0
        else:
            j = mdp.c(node.state, node.action) + sum(p * rec(child) for _, p, child in node.children)
        out[node.history.entries] = j
        return j

    rec(tree)
    return out


def audit_constant_threshold(mdp: Mdp, spec: RiskMeasureSpec, r0: float, x0: str | None = None) -> AuditReport:
    """Plan once at stage 0, then re-plan every tail with the unchanged threshold ``r0``."""
    x0 = mdp.initial_state if x0 is None else x0
    plan = brute_force_opt(mdp, spec, x0, r0).minimizers[0]
    tree = policy_tree(mdp, plan, x0, 0)
    costs = _node_costs(mdp, tree)
    risks = node_risks(mdp, spec, tree)
    fresh = backward_induction(mdp, spec)
    nodes = []
    for node in tree.walk():
        if node.action is None:
            continue
        backup = fresh[node.stage][node.state]
        h = node.history.entries
        optimal = backup.optimal_actions(r0)
        v = backup.value(r0)
        nodes.append(AuditNode(node.stage, node.state, str(node.history), r0, v, costs[h], risks[h],
                               node.action, optimal, _judge(v, costs[h], risks[h], r0, node.action, optimal)))
    return AuditReport("constant threshold", tuple(nodes))


@dataclass(frozen=True)
class VarianceDemo:
    r0: float
    scenario: Scenario
    rows: tuple[tuple[str, str, float, float, float, bool], ...]  # name, action at s1, J, mean, var, feasible
    selected: str | None
    seeks_losses: bool


def demo_variance(r0: float) -> VarianceDemo:
    """Pick the cheaper of the two policies whose total-cost variance is ``<= r0``."""
    scen = variance_instance()
    mdp = scen.mdp
    rows = []
    for name, u in (("pi1", "keep"), ("pi2", "incur")):
        pol = HistoryPolicy.markov(mdp, {"s1": u}, name=name)
        mean, var = static_variance_of_constraint_cost(mdp, pol)
        tree = policy_tree(mdp, pol, mdp.initial_state)
        j = _node_costs(mdp, tree)[tree.history.entries]
        rows.append((name, u, j, mean, var, var <= r0 + TOL))
    feasible = [r for r in rows if r[5]]
    chosen = min(feasible, key=lambda r: (r[2], r[0])) if feasible else None
    s1_costs = {u: mdp.d("s1", u) for u in mdp.admissible["s1"]}
    seeks = chosen is not None and s1_costs[chosen[1]] == max(s1_costs.values()) and len(set(s1_costs.values())) > 1
    return VarianceDemo(r0, scen, tuple(rows), chosen[0] if chosen else None, seeks)


@dataclass(frozen=True)
class AvarDemo:
    alpha: float
    r0: float
    scenario: Scenario
    root_avar: float
    stage1_avar: Mapping[str, float]
    nested_root: float
    outcomes: tuple[tuple[str, float, float], ...]  # leaf, path probability, total cost

    @property
    def root_feasible(self) -> bool:
        return self.root_avar <= self.r0 + TOL

    @property
    def stage1_acceptable(self) -> bool:
        return all(v <= self.r0 + TOL for v in self.stage1_avar.values())


def demo_avar(leaf_costs: Mapping[str, float] | None = None, alpha: float = 1 / 3, r0: float = 0.0) -> AvarDemo:
    """Static AVaR of the total constraint cost seen from the root and from each stage-1 state."""
    scen = avar_instance(leaf_costs)
    mdp = scen.mdp
    pol = HistoryPolicy.markov(mdp, {})
    root = static_avar_of_total_cost(mdp, pol, alpha, "s0", 0)
    stage1 = {x: static_avar_of_total_cost(mdp, pol, alpha, x, 1) for x in ("s1", "s2")}
    nested = eval_dynamic_risk(mdp, RiskMeasureSpec.uniform(CVaR(alpha), mdp.horizon), pol, "s0", 0)
    outcomes = []
    for x, px in mdp.successors("s0", "go"):
        for leaf, pl in mdp.successors(x, "go"):
            outcomes.append((leaf, px * pl, mdp.d(leaf, "end")))
    return AvarDemo(alpha, r0, scen, root, stage1, nested, tuple(outcomes))


@dataclass
class RolloutReport:
    n_samples: int
    seed: int
    mean_cost: float
    std_cost: float
    mean_constraint: float
    std_constraint: float
    thresholds: np.ndarray  # (n, N + 1)
    states: np.ndarray  # (n, N + 1) indices into mdp.states
    state_labels: tuple[str, ...]
    min_floor_slack: float
    min_terminal_threshold: float
    violations: int
    rtg_mismatches: int = 0

    @property
    def stderr_constraint(self) -> float:
        return self.std_constraint / math.sqrt(self.n_samples)

    def trajectory(self, i: int) -> list[tuple[str, float]]:
        return [(self.state_labels[s], float(r)) for s, r in zip(self.states[i], self.thresholds[i])]


def rollout(mdp: Mdp, policy: AugmentedPolicy, rtg: RiskToGoMap | None, x0: str, r0: float, n_samples: int,
            seed: int, floor: Callable[[int, str], float] | None = None) -> RolloutReport:
    """Sample trajectories under ``policy``, updating thresholds online.

    Uses numpy's PCG64 generator seeded with ``seed``; trajectories sharing a
    history are drawn as one block in sorted-history order, so results are
    reproducible for a given seed. ``floor(k, x)`` enables the per-node
    feasibility check; stored ``rtg`` thresholds are compared when given.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    n, horizon = n_samples, mdp.horizon
    index = {x: i for i, x in enumerate(mdp.states)}
    thresholds = np.empty((n, horizon + 1))
    states = np.empty((n, horizon + 1), dtype=int)
    cost = np.zeros(n)
    constraint = np.zeros(n)
    thresholds[:, 0] = r0
    states[:, 0] = index[x0]
    groups: dict[tuple[str, ...], np.ndarray] = {(x0,): np.arange(n)}
    mismatches = 0
    for k in range(horizon):
        nxt_groups: dict[tuple[str, ...], list] = defaultdict(list)
        for hist in sorted(groups):
            idx = groups[hist]
            x, r = hist[-1], float(thresholds[idx[0], k])
            if rtg is not None and hist in rtg.nodes and abs(rtg.nodes[hist].threshold - r) > TOL:
                mismatches += 1
            u, nxt = policy.step(k, x, r)
            succ = mdp.successors(x, u)
            draws = rng.choice(len(succ), size=len(idx), p=np.array([p for _, p in succ]))
            cost[idx] += mdp.c(x, u)
            constraint[idx] += mdp.d(x, u)
            for j, (y, _) in enumerate(succ):
                sel = idx[draws == j]
                if len(sel):
                    states[sel, k + 1] = index[y]
                    thresholds[sel, k + 1] = nxt[y]
                    nxt_groups[hist + (u, y)].append(sel)
        groups = {h: np.concatenate(parts) for h, parts in nxt_groups.items()}

    slack = INF
    violations = 0
    if floor is not None:
        uniq, inv = np.unique(states, axis=0, return_inverse=True)
        floors = np.array([[floor(k, mdp.states[s]) for k, s in enumerate(row)] for row in uniq])
        gap = thresholds - floors[np.ravel(inv)]
        slack = float(gap.min())
        violations = int(np.any(gap < -TOL, axis=1).sum())
    return RolloutReport(
        n, seed, float(cost.mean()), float(cost.std()), float(constraint.mean()), float(constraint.std()),
        thresholds, states, tuple(mdp.states), slack, float(thresholds[:, -1].min()), violations, mismatches,
    )

