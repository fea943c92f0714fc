"""Brute-force reference solver over deterministic history-dependent policies.

Shares no code with the dynamic program: policies are enumerated as decision
trees over reachable histories and scored by direct tree evaluation. The
reported minimizers are re-scored through the risk module's policy
evaluation and path enumeration as a cross-check.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import Infeasible, TooLarge
from .mdp import DecisionTree, History, HistoryPolicy, Mdp, enumerate_histories
from .risk import RiskMeasureSpec, eval_dynamic_risk

LIMIT = 10**7
TABLE_LIMIT = 1000
TOL = 1e-9


def count_policies(mdp: Mdp, state: str, stage: int = 0) -> int:
    """Number of distinct decision trees rooted at ``(state, stage)``."""
    memo: dict[tuple[int, str], int] = {}

    def rec(k: int, x: str) -> int:
        if k >= mdp.horizon:
            return 1
        if (k, x) not in memo:
            memo[(k, x)] = sum(
                math.prod(rec(k + 1, y) for y, _ in mdp.successors(x, u)) for u in mdp.admissible[x]
            )
        return memo[(k, x)]

    mdp.check_state(state)
    return rec(stage, state)


def enumerate_policies(mdp: Mdp, state: str, stage: int = 0) -> Iterator[DecisionTree]:
    """Decision trees in lexicographic order (actions, then successor labels).

    Histories a tree never reaches carry no decision; they affect neither cost
    nor risk.
    """
    mdp.check_state(state)

    def rec(k: int, x: str) -> Iterator:
        if k >= mdp.horizon:
            yield None
            return
        for u in mdp.admissible[x]:
            succ = [y for y, _ in mdp.successors(x, u)]
            for combo in itertools.product(*[list(rec(k + 1, y)) for y in succ]):
                yield (u, tuple(zip(succ, combo)))

    return rec(stage, state)


@dataclass(frozen=True)
class _Scored:
    tree: DecisionTree
    cost: float
    risk: float


def _scored_subtrees(mdp: Mdp, spec: RiskMeasureSpec, k: int, x: str, memo: dict) -> list[_Scored]:
    if k >= mdp.horizon:
        return [_Scored(None, 0.0, 0.0)]
    key = (k, x)
    if key in memo:
        return memo[key]
    out = []
    rho = spec.at(k)
    for u in mdp.admissible[x]:
        succ = mdp.successors(x, u)
        p = np.array([q for _, q in succ])
        kids = [_scored_subtrees(mdp, spec, k + 1, y, memo) for y, _ in succ]
        for combo in itertools.product(*kids):
            cost = mdp.c(x, u) + float(np.dot(p, [s.cost for s in combo]))
            risk = mdp.d(x, u) + rho.evaluate(p, np.array([s.risk for s in combo]))
            out.append(_Scored((u, tuple((y, s.tree) for (y, _), s in zip(succ, combo))), cost, risk))
    memo[key] = out
    return out


def describe_tree(tree: DecisionTree, root: str, mdp: Mdp, start_stage: int = 0) -> str:
    """Decisions at histories with more than one admissible action."""
    parts = []

    def rec(h: History, node) -> None:
        if node is None:
            return
        u, children = node
        if len(mdp.admissible[h.state]) > 1:
            parts.append(f"{h}:{u}")
        for y, sub in children:
            rec(h.extend(u, y), sub)

    rec(History((root,), start_stage), tree)
    return "; ".join(parts) if parts else "(no choices)"


@dataclass
class OracleResult:
    value: float
    risk_floor: float
    minimizers: list[HistoryPolicy]
    trees: list[DecisionTree]
    first_actions: frozenset[str]
    count: int
    table: list[tuple[str, float, float]] | None = field(default=None)


def brute_force_tail(mdp: Mdp, spec: RiskMeasureSpec, state: str, stage: int, r: float,
                     limit: int = LIMIT, with_table: bool = False) -> OracleResult:
    """Minimal expected cost over tail policies with nested risk ``<= r``.

    Raises :class:`Infeasible` when no policy meets the threshold and
    :class:`TooLarge` when enumeration would exceed ``limit`` policies.
    """
    count = count_policies(mdp, state, stage)
    if count > limit:
        raise TooLarge(count, limit)
    scored = _scored_subtrees(mdp, spec, stage, state, {})
    floor = min(s.risk for s in scored)
    feasible = [s for s in scored if s.risk <= r + TOL]
    table = None
    if with_table and count <= TABLE_LIMIT:
        table = [(describe_tree(s.tree, state, mdp, stage), s.cost, s.risk) for s in scored]
    if not feasible:
        raise Infeasible(floor, r, what="tail problem" if stage else "problem")
    best = min(s.cost for s in feasible)
    argmin = [s for s in feasible if s.cost <= best + TOL]
    policies = []
    for s in argmin:
        pol = HistoryPolicy.from_tree(s.tree, state, stage, name=describe_tree(s.tree, state, mdp, stage))
        _cross_check(mdp, spec, pol, state, stage, s)
        policies.append(pol)
    result = OracleResult(best, floor, policies, [s.tree for s in argmin],
                          frozenset(s.tree[0] for s in argmin if s.tree is not None), count, table)
    return result


def _cross_check(mdp: Mdp, spec: RiskMeasureSpec, policy: HistoryPolicy, state: str, stage: int, s: _Scored) -> None:
    risk = eval_dynamic_risk(mdp, spec, policy, state, stage)
    cost = 0.0
    for wh in enumerate_histories(mdp, state, stage, policy):
        h = wh.history
        cost += wh.probability * sum(mdp.c(x, u) for x, u in zip(h.states, h.actions))
    if abs(risk - s.risk) > TOL or abs(cost - s.cost) > TOL * max(1.0, abs(cost)):
        raise RuntimeError(f"oracle scoring disagrees with direct evaluation for {policy.name}")


def brute_force_opt(mdp: Mdp, spec: RiskMeasureSpec, x0: str | None, r0: float,
                    limit: int = LIMIT, with_table: bool = False) -> OracleResult:
    x0 = mdp.initial_state if x0 is None else x0
    return brute_force_tail(mdp, spec, x0, 0, r0, limit, with_table)
