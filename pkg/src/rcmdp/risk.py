"""Coherent one-step risk measures and their compositional (nested) evaluation.

All measures treat larger values as worse: the inputs are costs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import InvalidDistribution, InvalidRiskSpec
from .mdp import History, Mdp, PolicyNode, policy_tree

PROB_TOL = 1e-9


@dataclass(frozen=True)
class Expectation:
    kind = "expectation"

    def evaluate(self, probs: np.ndarray, values: np.ndarray) -> float:
        return float(np.dot(probs, values))

    def evaluate_batch(self, probs: np.ndarray, values: np.ndarray) -> np.ndarray:
        return values @ probs

    def to_document(self) -> dict:
        return {"kind": self.kind}

    def label(self) -> str:
        return "E"


@dataclass(frozen=True)
class CVaR:
    """Average value-at-risk: mean of the worst ``1 - alpha`` probability mass.

    When the alpha-quantile falls inside an atom, that atom is split so the
    averaged tail carries exactly ``1 - alpha`` mass.
    """

    alpha: float
    kind = "cvar"

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise InvalidRiskSpec(f"CVaR alpha must lie in (0, 1), got {self.alpha!r}")

    def evaluate(self, probs: np.ndarray, values: np.ndarray) -> float:
        tail = 1.0 - self.alpha
        remaining = tail
        acc = 0.0
        for i in np.argsort(-values, kind="stable"):
            if remaining <= 0.0:
                break
            take = min(float(probs[i]), remaining)
            acc += take * float(values[i])
            remaining -= take
        return acc / tail

    def evaluate_batch(self, probs: np.ndarray, values: np.ndarray) -> np.ndarray:
        tail = 1.0 - self.alpha
        order = np.argsort(-values, axis=1, kind="stable")
        v = np.take_along_axis(values, order, axis=1)
        p = probs[order]
        before = np.cumsum(p, axis=1) - p
        take = np.clip(tail - before, 0.0, p)
        return (take * v).sum(axis=1) / tail

    def to_document(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha}

    def label(self) -> str:
        return f"CVaR[{self.alpha:g}]"


@dataclass(frozen=True)
class WorstCase:
    kind = "worst_case"

    def evaluate(self, probs: np.ndarray, values: np.ndarray) -> float:
        return float(np.max(values[probs > 0]))

    def evaluate_batch(self, probs: np.ndarray, values: np.ndarray) -> np.ndarray:
        return np.max(values[:, probs > 0], axis=1)

    def to_document(self) -> dict:
        return {"kind": self.kind}

    def label(self) -> str:
        return "max"


@dataclass(frozen=True)
class MeanUpperSemideviation:
    """``E[X] + c * E[(X - E[X])_+]``; coherent for ``c`` in [0, 1]."""

    c: float
    kind = "semideviation"

    def __post_init__(self) -> None:
        if not (0.0 <= self.c <= 1.0):
            raise InvalidRiskSpec(f"semideviation weight c must lie in [0, 1], got {self.c!r}")

    def evaluate(self, probs: np.ndarray, values: np.ndarray) -> float:
        mean = float(np.dot(probs, values))
        return mean + self.c * float(np.dot(probs, np.maximum(values - mean, 0.0)))

    def evaluate_batch(self, probs: np.ndarray, values: np.ndarray) -> np.ndarray:
        mean = values @ probs
        return mean + self.c * (np.maximum(values - mean[:, None], 0.0) @ probs)

    def to_document(self) -> dict:
        return {"kind": self.kind, "c": self.c}

    def label(self) -> str:
        return f"semidev[{self.c:g}]"


OneStepMeasure = Union[Expectation, CVaR, WorstCase, MeanUpperSemideviation]


def parse_measure(raw: Mapping) -> OneStepMeasure:
    if not isinstance(raw, Mapping) or "kind" not in raw:
        raise InvalidRiskSpec(f"risk descriptor needs a 'kind': {raw!r}")
    kind = raw["kind"]
    params = {k: v for k, v in raw.items() if k != "kind"}

    def only(*allowed: str) -> None:
        extra = set(params) - set(allowed)
        if extra:
            raise InvalidRiskSpec(f"risk kind {kind!r} does not take {sorted(extra)}")
        for name in allowed:
            if name not in params:
                raise InvalidRiskSpec(f"risk kind {kind!r} requires {name!r}")

    if kind == "expectation":
        only()
        return Expectation()
    if kind == "worst_case":
        only()
        return WorstCase()
    if kind == "cvar":
        only("alpha")
        return CVaR(float(params["alpha"]))
    if kind == "semideviation":
        only("c")
        return MeanUpperSemideviation(float(params["c"]))
    raise InvalidRiskSpec(f"unknown risk kind {kind!r}")


@dataclass(frozen=True)
class RiskMeasureSpec:
    """One one-step measure per decision stage ``0..N-1``."""

    per_stage: tuple[OneStepMeasure, ...]

    def __post_init__(self) -> None:
        if not self.per_stage:
            raise InvalidRiskSpec("risk spec needs at least one stage")

    @classmethod
    def uniform(cls, measure: OneStepMeasure, horizon: int) -> "RiskMeasureSpec":
        return cls(tuple([measure] * horizon))

    @classmethod
    def from_document(cls, raw, horizon: int) -> "RiskMeasureSpec":
        if isinstance(raw, list):
            if len(raw) != horizon:
                raise InvalidRiskSpec(f"stage-wise risk list has {len(raw)} entries, horizon is {horizon}")
            return cls(tuple(parse_measure(r) for r in raw))
        return cls.uniform(parse_measure(raw), horizon)

    def to_document(self):
        docs = [m.to_document() for m in self.per_stage]
        if all(d == docs[0] for d in docs):
            return docs[0]
        return docs

    def at(self, stage: int) -> OneStepMeasure:
        return self.per_stage[stage]

    @property
    def horizon(self) -> int:
        return len(self.per_stage)

    def label(self) -> str:
        labels = [m.label() for m in self.per_stage]
        return labels[0] if len(set(labels)) == 1 else ",".join(labels)


@dataclass(frozen=True)
class FiniteDistribution:
    """Random value over labelled outcomes: ``(label, probability, value)``."""

    support: tuple[tuple[str, float, float], ...]

    def __post_init__(self) -> None:
        if not self.support:
            raise InvalidDistribution("empty support")
        probs = [p for _, p, _ in self.support]
        if any((not math.isfinite(p)) or p < 0 for p in probs):
            raise InvalidDistribution(f"negative or non-finite probability in {probs}")
        if abs(math.fsum(probs) - 1.0) > PROB_TOL:
            raise InvalidDistribution(f"probabilities sum to {math.fsum(probs):.12g}")
        if any(not math.isfinite(v) for _, _, v in self.support):
            raise InvalidDistribution("non-finite value in support")

    @classmethod
    def of(cls, probs: Sequence[float], values: Sequence[float]) -> "FiniteDistribution":
        return cls(tuple((str(i), float(p), float(v)) for i, (p, v) in enumerate(zip(probs, values))))

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p, _ in self.support], dtype=float)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, _, v in self.support], dtype=float)


def eval_one_step(measure: OneStepMeasure, dist: FiniteDistribution) -> float:
    return measure.evaluate(dist.probs, dist.values)


def _one_step(measure: OneStepMeasure, items: Iterable[tuple[float, float]]) -> float:
    pv = list(items)
    return measure.evaluate(np.array([p for p, _ in pv]), np.array([v for _, v in pv]))


def node_risks(mdp: Mdp, spec: RiskMeasureSpec, tree: PolicyNode) -> dict[tuple[str, ...], float]:
    """Tail risk ``R_N`` at every node of a policy tree, keyed by history entries."""
    out: dict[tuple[str, ...], float] = {}

    def rec(node: PolicyNode) -> float:
        if node.action is None:
            r = 0.0
        else:
            succ = [(p, rec(child)) for _, p, child in node.children]
            r = mdp.d(node.state, node.action) + _one_step(spec.at(node.stage), succ)
        out[node.history.entries] = r
        return r

    rec(tree)
    return out


def eval_dynamic_risk(mdp: Mdp, spec: RiskMeasureSpec, policy: Callable[[History], str],
                      state: str | None = None, stage: int = 0, prefix: Sequence[str] = ()) -> float:
    """Nested risk of the constraint costs of ``policy`` from ``(state, stage)``."""
    state = mdp.initial_state if state is None else state
    tree = policy_tree(mdp, policy, state, stage, prefix)
    return node_risks(mdp, spec, tree)[tree.history.entries]


def _path_costs(mdp: Mdp, tree: PolicyNode) -> list[tuple[float, float]]:
    """``(probability, cumulative constraint cost)`` for every leaf of ``tree``."""
    out = []
    stack = [(tree, 1.0, 0.0)]
    while stack:
        node, prob, acc = stack.pop()
        if node.action is None:
            out.append((prob, acc))
            continue
        step = mdp.d(node.state, node.action)
        for _, p, child in node.children:
            stack.append((child, prob * p, acc + step))
    return out


def static_variance_of_constraint_cost(mdp: Mdp, policy: Callable[[History], str],
                                       state: str | None = None, stage: int = 0) -> tuple[float, float]:
    state = mdp.initial_state if state is None else state
    paths = _path_costs(mdp, policy_tree(mdp, policy, state, stage))
    mean = math.fsum(p * v for p, v in paths)
    var = math.fsum(p * (v - mean) ** 2 for p, v in paths)
    return mean, var


def static_avar_of_total_cost(mdp: Mdp, policy: Callable[[History], str], alpha: float,
                              state: str | None = None, stage: int = 0,
                              prefix: Sequence[str] = ()) -> float:
    state = mdp.initial_state if state is None else state
    paths = _path_costs(mdp, policy_tree(mdp, policy, state, stage, prefix))
    return _one_step(CVaR(alpha), paths)
