"""Backward induction on the (state, risk threshold) augmented space.

Value functions are exact staircases in the threshold. A backup at ``(k, x)``
enumerates, for each action, every assignment of successor thresholds drawn
from the successors' breakpoints; because the next-stage value functions are
non-increasing and attain each value at its breakpoint, and the one-step risk
is monotone, nothing is lost by that restriction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import Infeasible
from .mdp import Mdp
from .risk import OneStepMeasure, RiskMeasureSpec
from .staircase import INF, TOL, ThresholdValueFunction, sweep_envelope

log = logging.getLogger(__name__)

_ROUND = 12  # decimals used for tie-break sort keys


@dataclass(frozen=True)
class FeasibilityBounds:
    """Minimal and maximal achievable tail risk for every ``(stage, state)``."""

    lower: Mapping[tuple[int, str], float]
    upper_cap: Mapping[tuple[int, str], float]
    stage_cost_bounds: tuple[float, float]

    def floor(self, stage: int, state: str) -> float:
        return self.lower[(stage, state)]

    def cap(self, stage: int, state: str) -> float:
        return self.upper_cap[(stage, state)]


def compute_feasibility_bounds(mdp: Mdp, spec: RiskMeasureSpec) -> FeasibilityBounds:
    n = mdp.horizon
    lower = {(n, x): 0.0 for x in mdp.states}
    upper = {(n, x): 0.0 for x in mdp.states}
    for k in range(n - 1, -1, -1):
        rho = spec.at(k)
        for x in mdp.states:
            lo, hi = INF, -INF
            for u in mdp.admissible[x]:
                succ = mdp.successors(x, u)
                p = np.array([q for _, q in succ])
                lo = min(lo, mdp.d(x, u) + rho.evaluate(p, np.array([lower[(k + 1, y)] for y, _ in succ])))
                hi = max(hi, mdp.d(x, u) + rho.evaluate(p, np.array([upper[(k + 1, y)] for y, _ in succ])))
            lower[(k, x)] = lo
            upper[(k, x)] = hi
    ds = [mdp.d(x, u) for x, u in mdp.pairs()]
    return FeasibilityBounds(MappingProxyType(lower), MappingProxyType(upper), (min(ds), max(ds)))


@dataclass(frozen=True)
class BellmanCell:
    """Minimizer recorded at one breakpoint of a value staircase."""

    breakpoint: float
    value: float
    action: str
    thresholds: Mapping[str, float]
    activation: float

    def shifted(self, r: float) -> dict[str, float]:
        """Successor thresholds meeting the risk budget ``r`` with equality."""
        delta = r - self.activation
        return {y: t + delta for y, t in self.thresholds.items()}


@dataclass(frozen=True)
class StateBackup:
    value: ThresholdValueFunction
    cells: tuple[BellmanCell, ...] = ()
    per_action: Mapping[str, ThresholdValueFunction] = field(default_factory=dict)

    def cell_at(self, r: float) -> BellmanCell | None:
        i = self.value.index(r)
        return self.cells[i] if i >= 0 and self.cells else None

    def optimal_actions(self, r: float) -> frozenset[str]:
        v = self.value(r)
        if not math.isfinite(v):
            return frozenset()
        return frozenset(u for u, q in self.per_action.items() if q(r) <= v + TOL)


TERMINAL = StateBackup(ThresholdValueFunction.zero())


@dataclass
class _Candidates:
    action: str
    labels: list[str]
    probs: np.ndarray
    thresholds: np.ndarray  # (M, m) successor thresholds
    objective: np.ndarray  # (M,)
    activation: np.ndarray  # (M,)


def _candidates(mdp: Mdp, rho: OneStepMeasure, x: str, u: str,
                v_next: Mapping[str, ThresholdValueFunction], cap: float) -> _Candidates | None:
    succ = mdp.successors(x, u)
    labels = [y for y, _ in succ]
    probs = np.array([p for _, p in succ])
    fns = [v_next[y] for y in labels]
    if any(f.is_infeasible for f in fns):
        return None
    grids = np.meshgrid(*[np.arange(len(f)) for f in fns], indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=1)
    thr = np.column_stack([np.asarray(f.breakpoints)[idx[:, j]] for j, f in enumerate(fns)])
    val = np.column_stack([np.asarray(f.values)[idx[:, j]] for j, f in enumerate(fns)])
    obj = mdp.c(x, u) + val @ probs
    act = mdp.d(x, u) + rho.evaluate_batch(probs, thr)
    keep = act <= cap + TOL
    # lexicographic successor-threshold order survives the stable sort below
    order = np.lexsort((np.round(obj[keep], _ROUND), np.round(act[keep], _ROUND)))
    return _Candidates(u, labels, probs, thr[keep][order], obj[keep][order], act[keep][order])


def _prefilter(act: np.ndarray, obj: np.ndarray) -> np.ndarray:
    """Indices that can start a new staircase step (sorted input)."""
    if len(obj) == 0:
        return np.zeros(0, dtype=int)
    prior = np.concatenate(([INF], np.minimum.accumulate(obj)[:-1]))
    return np.flatnonzero(obj < prior - TOL)


def _assemble(points: list[tuple[float, float, str, dict[str, float], float]]) -> tuple[ThresholdValueFunction, tuple[BellmanCell, ...]]:
    """Staircase and cells from ``(threshold, value, action, r', activation)`` points."""
    points = sorted(points, key=lambda t: (round(t[0], _ROUND), round(t[1], _ROUND), t[2]))
    kept = sweep_envelope([p[0] for p in points], [p[1] for p in points])
    fn = ThresholdValueFunction.from_pairs((b, v) for b, v, _ in kept)
    cells = tuple(
        BellmanCell(b, v, points[i][2], MappingProxyType(points[i][3]), points[i][4])
        for b, v, i in kept
    )
    return fn, cells


def _backup_state_inequality(mdp: Mdp, rho: OneStepMeasure, x: str,
                             v_next: Mapping[str, ThresholdValueFunction], cap: float) -> StateBackup:
    all_points = []
    per_action = {}
    for u in mdp.admissible[x]:
        cand = _candidates(mdp, rho, x, u, v_next, cap)
        if cand is None or len(cand.objective) == 0:
            per_action[u] = ThresholdValueFunction.infeasible()
            continue
        points = [
            (float(cand.activation[i]), float(cand.objective[i]), u,
             dict(zip(cand.labels, map(float, cand.thresholds[i]))), float(cand.activation[i]))
            for i in _prefilter(cand.activation, cand.objective)
        ]
        fn, cells = _assemble(points)
        per_action[u] = fn
        all_points.extend((c.breakpoint, c.value, c.action, dict(c.thresholds), c.activation) for c in cells)
    fn, cells = _assemble(all_points)
    return StateBackup(fn, cells, MappingProxyType(per_action))


def _backup_state_equality(mdp: Mdp, rho: OneStepMeasure, x: str,
                           v_next: Mapping[str, ThresholdValueFunction], cap: float) -> StateBackup:
    cands = []
    for u in mdp.admissible[x]:
        cand = _candidates(mdp, rho, x, u, v_next, cap)
        if cand is not None and len(cand.objective):
            cands.append(cand)
    per_action = {u: ThresholdValueFunction.infeasible() for u in mdp.admissible[x]}
    if not cands:
        return StateBackup(ThresholdValueFunction.infeasible(), (), MappingProxyType(per_action))
    queries = np.unique(np.round(np.concatenate([c.activation for c in cands]), _ROUND))

    all_points = []
    for cand in cands:
        # Every candidate becomes a budget-independent increment L = r' - activation,
        # so d + rho(L) = 0 and r' = r + L meets the budget r with equality.
        incr = cand.thresholds - cand.activation[:, None]
        shifted = queries[:, None, None] + incr[None, :, :]  # (Q, M, m)
        total = np.full(shifted.shape[:2], mdp.c(x, cand.action))
        for j, y in enumerate(cand.labels):
            total = total + cand.probs[j] * v_next[y].evaluate(shifted[:, :, j])
        best = np.argmin(np.round(np.where(np.isfinite(total), total, INF), _ROUND), axis=1)
        points = []
        for qi, j in enumerate(best):
            v = total[qi, j]
            if not math.isfinite(v):
                continue
            r_next = dict(zip(cand.labels, map(float, shifted[qi, j])))
            points.append((float(queries[qi]), float(v), cand.action, r_next, float(queries[qi])))
        fn, cells = _assemble(points)
        per_action[cand.action] = fn
        all_points.extend(points)
    fn, cells = _assemble(all_points)
    return StateBackup(fn, cells, MappingProxyType(per_action))


def _backup(mdp, spec, stage, v_next, bounds, state_fn) -> dict[str, StateBackup]:
    if not 0 <= stage < mdp.horizon:
        raise ValueError(f"backup stage {stage} outside 0..{mdp.horizon - 1}")
    bounds = bounds or compute_feasibility_bounds(mdp, spec)
    rho = spec.at(stage)
    return {x: state_fn(mdp, rho, x, v_next, bounds.cap(stage, x)) for x in mdp.states}


def bellman_backup(mdp: Mdp, spec: RiskMeasureSpec, stage: int,
                   v_next: Mapping[str, ThresholdValueFunction],
                   bounds: FeasibilityBounds | None = None) -> dict[str, StateBackup]:
    """One application of the inequality-constrained Bellman operator at ``stage``.

    States whose feasible set is empty for every threshold get the
    ``+inf``-everywhere staircase.
    """
    return _backup(mdp, spec, stage, v_next, bounds, _backup_state_inequality)


def bellman_backup_equality(mdp: Mdp, spec: RiskMeasureSpec, stage: int,
                            v_next: Mapping[str, ThresholdValueFunction],
                            bounds: FeasibilityBounds | None = None) -> dict[str, StateBackup]:
    """Same operator restricted to assignments that exhaust the risk budget.

    Recorded minimizers satisfy ``d(x, u) + rho(r') = breakpoint``.
    """
    return _backup(mdp, spec, stage, v_next, bounds, _backup_state_equality)


def backward_induction(mdp: Mdp, spec: RiskMeasureSpec, until: int = 0, equality: bool = False,
                       bounds: FeasibilityBounds | None = None) -> dict[int, dict[str, StateBackup]]:
    """Stage tables ``until..N``; stage N holds the terminal zero functions."""
    if spec.horizon != mdp.horizon:
        raise ValueError(f"risk spec covers {spec.horizon} stages, horizon is {mdp.horizon}")
    bounds = bounds or compute_feasibility_bounds(mdp, spec)
    step = bellman_backup_equality if equality else bellman_backup
    tables: dict[int, dict[str, StateBackup]] = {mdp.horizon: {x: TERMINAL for x in mdp.states}}
    for k in range(mdp.horizon - 1, until - 1, -1):
        v_next = {x: b.value for x, b in tables[k + 1].items()}
        tables[k] = step(mdp, spec, k, v_next, bounds)
        log.debug("stage %d: breakpoints %s", k, {x: len(b.value) for x, b in tables[k].items()})
    return tables


@dataclass(frozen=True)
class Solution:
    mdp: Mdp
    spec: RiskMeasureSpec
    bounds: FeasibilityBounds
    tables: Mapping[int, Mapping[str, StateBackup]]
    x0: str
    r0: float

    @property
    def value(self) -> float:
        return self.value_at(0, self.x0, self.r0)

    def backup(self, stage: int, state: str) -> StateBackup:
        return self.tables[stage][state]

    def value_function(self, stage: int, state: str) -> ThresholdValueFunction:
        return self.tables[stage][state].value

    def value_at(self, stage: int, state: str, r: float) -> float:
        return self.value_function(stage, state)(r)


def solve(mdp: Mdp, spec: RiskMeasureSpec, r0: float, x0: str | None = None,
          equality: bool = False) -> Solution:
    """Full backward induction; raises :class:`Infeasible` below the risk floor."""
    if not math.isfinite(r0):
        raise ValueError("r0 must be finite")
    x0 = mdp.initial_state if x0 is None else x0
    mdp.check_state(x0)
    bounds = compute_feasibility_bounds(mdp, spec)
    tables = backward_induction(mdp, spec, 0, equality, bounds)
    sol = Solution(mdp, spec, bounds, MappingProxyType(tables), x0, float(r0))
    floor = sol.value_function(0, x0).floor
    if r0 < floor - TOL:
        raise Infeasible(floor, r0)
    return sol
