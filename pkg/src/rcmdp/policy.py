"""Augmented-state policies, risk-to-go construction and the martingale check."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from types import MappingProxyType
from typing import Callable, Iterator, Mapping

import numpy as np

from .dp import Solution
from .errors import InfeasibleThreshold, PolicyInfeasibleAtThreshold
from .mdp import History, HistoryPolicy, Mdp, policy_tree
from .risk import RiskMeasureSpec, node_risks
from .staircase import TOL

Step = tuple[str, dict[str, float]]


class AugmentedPolicy:
    """Feedback law on ``(stage, state, threshold)``.

    ``rule(k, x, r)`` returns the action and the successor thresholds
    ``{x': r'}``; the risk-to-go increment is ``L(x') = r' - r``.
    """

    def __init__(self, rule: Callable[[int, str, float], Step], name: str = ""):
        self._rule = rule
        self.name = name

    def step(self, stage: int, state: str, r: float) -> Step:
        return self._rule(stage, state, r)

    def decision(self, stage: int, state: str, r: float) -> str:
        return self._rule(stage, state, r)[0]

    def threshold_update(self, stage: int, state: str, r: float) -> dict[str, float]:
        return self._rule(stage, state, r)[1]

    def increments(self, stage: int, state: str, r: float) -> dict[str, float]:
        return {y: t - r for y, t in self.threshold_update(stage, state, r).items()}

    @classmethod
    def from_solution(cls, solution: Solution) -> "AugmentedPolicy":
        """Read minimizers off the solution's Bellman cells.

        A threshold between breakpoints uses the cell of the largest breakpoint
        below it, with successor thresholds shifted so the budget is met with
        equality.
        """

        def rule(k: int, x: str, r: float) -> Step:
            backup = solution.backup(k, x)
            cell = backup.cell_at(r)
            if cell is None:
                raise InfeasibleThreshold(backup.value.floor, r, what=f"threshold at stage {k}, state {x!r}")
            return cell.action, cell.shifted(r)

        return cls(rule, name="solution")

    @classmethod
    def from_risk_to_go(cls, rtg: "RiskToGoMap") -> "AugmentedPolicy":
        """Tabular policy replaying the decisions stored in a risk-to-go map."""
        index: dict[tuple[int, str], list[RiskToGoNode]] = defaultdict(list)
        for node in rtg.nodes.values():
            if node.action is not None:
                index[(node.history.stage, node.history.state)].append(node)

        def rule(k: int, x: str, r: float) -> Step:
            for node in index.get((k, x), ()):
                if abs(node.threshold - r) <= TOL:
                    return node.action, dict(node.next_thresholds)
            raise KeyError(f"no stored decision at stage {k}, state {x!r}, threshold {r!r}")

        return cls(rule, name="risk-to-go table")


@dataclass(frozen=True)
class RiskToGoNode:
    history: History
    threshold: float
    action: str | None
    next_thresholds: Mapping[str, float]

    @property
    def increments(self) -> dict[str, float]:
        return {y: t - self.threshold for y, t in self.next_thresholds.items()}


@dataclass(frozen=True)
class RiskToGoMap:
    """Thresholds carried along every positive-probability history of a plan."""

    r0: float
    root: tuple[str, ...]
    nodes: Mapping[tuple[str, ...], RiskToGoNode]

    @property
    def root_node(self) -> RiskToGoNode:
        return self.nodes[self.root]

    def children(self, node: RiskToGoNode) -> Iterator[RiskToGoNode]:
        for y in node.next_thresholds:
            yield self.nodes[node.history.extend(node.action, y).entries]

    def paths(self) -> list[list[RiskToGoNode]]:
        """Root-to-leaf node sequences."""
        out = []

        def rec(node, acc):
            acc = acc + [node]
            if node.action is None:
                out.append(acc)
            for child in self.children(node):
                rec(child, acc)

        rec(self.root_node, [])
        return out

    def threshold_at(self, history: tuple[str, ...]) -> float:
        return self.nodes[history].threshold

    def history_policy(self) -> HistoryPolicy:
        table = {h: n.action for h, n in self.nodes.items() if n.action is not None}
        return HistoryPolicy(table, name="risk-to-go plan")


def _walk_augmented(mdp: Mdp, policy: AugmentedPolicy, x0: str, r0: float, stage: int) -> RiskToGoMap:
    nodes: dict[tuple[str, ...], RiskToGoNode] = {}

    def rec(h: History, r: float) -> None:
        if h.stage >= mdp.horizon:
            nodes[h.entries] = RiskToGoNode(h, r, None, MappingProxyType({}))
            return
        u, nxt = policy.step(h.stage, h.state, r)
        succ = mdp.successors(h.state, u)
        nxt = {y: float(nxt[y]) for y, _ in succ}
        nodes[h.entries] = RiskToGoNode(h, r, u, MappingProxyType(nxt))
        for y, _ in succ:
            rec(h.extend(u, y), nxt[y])

    root = History((x0,), stage)
    rec(root, float(r0))
    return RiskToGoMap(float(r0), root.entries, MappingProxyType(nodes))


def extract_policy(solution: Solution, x0: str | None = None, r0: float | None = None) -> tuple[AugmentedPolicy, RiskToGoMap]:
    """Optimal augmented policy and the thresholds it induces from ``(x0, r0)``."""
    x0 = solution.x0 if x0 is None else x0
    r0 = solution.r0 if r0 is None else float(r0)
    floor = solution.value_function(0, x0).floor
    if r0 < floor - TOL:
        raise InfeasibleThreshold(floor, r0)
    policy = AugmentedPolicy.from_solution(solution)
    return policy, _walk_augmented(solution.mdp, policy, x0, r0, 0)


def augmented_tree(mdp: Mdp, policy: AugmentedPolicy, x: str, r: float, stage: int = 0) -> RiskToGoMap:
    """Unfold an augmented policy from ``(stage, x, r)``."""
    mdp.check_state(x)
    return _walk_augmented(mdp, policy, x, r, stage)


def risk_to_go_from_policy(mdp: Mdp, spec: RiskMeasureSpec, policy: Callable[[History], str], r0: float,
                           x0: str | None = None, stage: int = 0) -> RiskToGoMap:
    """Thresholds ``r_{k+1} = r_k + R(x_{k+1}) - R(x_k)`` along a feasible plan.

    ``R`` is the plan's own tail risk at each node.
    """
    x0 = mdp.initial_state if x0 is None else x0
    tree = policy_tree(mdp, policy, x0, stage)
    risks = node_risks(mdp, spec, tree)
    root_risk = risks[tree.history.entries]
    if root_risk > r0 + TOL:
        raise PolicyInfeasibleAtThreshold(root_risk, r0)
    nodes: dict[tuple[str, ...], RiskToGoNode] = {}

    def rec(node, r: float) -> None:
        here = risks[node.history.entries]
        nxt = {y: r + risks[child.history.entries] - here for y, _, child in node.children}
        nodes[node.history.entries] = RiskToGoNode(node.history, r, node.action, MappingProxyType(nxt))
        for y, _, child in node.children:
            rec(child, nxt[y])

    rec(tree, float(r0))
    return RiskToGoMap(float(r0), tree.history.entries, MappingProxyType(nodes))


def _action(policy, node: RiskToGoNode) -> str:
    if policy is None:
        return node.action
    if isinstance(policy, AugmentedPolicy):
        return policy.decision(node.history.stage, node.history.state, node.threshold)
    return policy(node.history)


def martingale_check(mdp: Mdp, spec: RiskMeasureSpec, policy, rtg: RiskToGoMap) -> float:
    """Largest ``|rho_k(M_{k+1}) - M_k|`` over the nodes of ``rtg``.

    ``M_k`` is the threshold at stage k plus the constraint cost accrued before
    stage k. ``policy`` may be ``None`` to use the actions stored in ``rtg``.
    """
    worst = 0.0
    stack = [(rtg.root_node, 0.0)]
    while stack:
        node, accrued = stack.pop()
        if node.action is None:
            continue
        u = _action(policy, node)
        if u != node.action:
            raise ValueError(f"policy action {u!r} differs from stored {node.action!r} at {node.history}")
        x = node.history.state
        after = accrued + mdp.d(x, u)
        succ = mdp.successors(x, u)
        m_next = np.array([node.next_thresholds[y] + after for y, _ in succ])
        m_here = node.threshold + accrued
        got = spec.at(node.history.stage).evaluate(np.array([p for _, p in succ]), m_next)
        worst = max(worst, abs(got - m_here))
        for child in rtg.children(node):
            stack.append((child, after))
    return worst


def evaluate_plan(mdp: Mdp, spec: RiskMeasureSpec, rtg: RiskToGoMap) -> tuple[float, float]:
    """Expected objective cost and nested constraint risk of the plan in ``rtg``."""

    def rec(node: RiskToGoNode) -> tuple[float, float]:
        if node.action is None:
            return 0.0, 0.0
        x, u = node.history.state, node.action
        succ = mdp.successors(x, u)
        vals = [rec(rtg.nodes[node.history.extend(u, y).entries]) for y, _ in succ]
        p = np.array([q for _, q in succ])
        j = mdp.c(x, u) + float(np.dot(p, [v[0] for v in vals]))
        r = mdp.d(x, u) + spec.at(node.history.stage).evaluate(p, np.array([v[1] for v in vals]))
        return j, r

    return rec(rtg.root_node)


def evaluate_augmented(mdp: Mdp, spec: RiskMeasureSpec, policy: AugmentedPolicy, x: str, r: float,
                       stage: int = 0) -> tuple[float, float]:
    """``(J, R)`` of an augmented policy started at ``(stage, x, r)``."""
    return evaluate_plan(mdp, spec, augmented_tree(mdp, policy, x, r, stage))


def feasibility_violations(rtg: RiskToGoMap, floor: Callable[[int, str], float]) -> list[RiskToGoNode]:
    """Nodes whose threshold falls below the risk floor (or below 0 at stage N)."""
    bad = []
    for node in rtg.nodes.values():
        lo = floor(node.history.stage, node.history.state)
        if node.threshold < lo - TOL or (node.action is None and node.threshold < -TOL):
            bad.append(node)
    return bad


def telescoping_gap(rtg: RiskToGoMap, root_risk: float) -> float:
    """Largest ``|r_N - (r0 - R(x0))|`` over leaves."""
    target = rtg.r0 - root_risk
    return max((abs(n.threshold - target) for n in rtg.nodes.values() if n.action is None), default=0.0)
