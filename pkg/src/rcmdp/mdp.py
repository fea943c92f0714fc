"""Finite MDP data model, histories and deterministic history-dependent policies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Iterator, Mapping, NamedTuple, Sequence

from .errors import (
    EmptyAdmissibleSet,
    MissingField,
    PolicyUndefinedOnHistory,
    ProbabilityRowNotNormalized,
    ScenarioError,
    StateUnknown,
    UndefinedCost,
    UnknownField,
)

PROB_TOL = 1e-9

REQUIRED_KEYS = ("horizon", "states", "actions", "transitions", "cost_c", "cost_d")
OPTIONAL_KEYS = ("risk", "r0", "name", "initial_state", "reference")

Pair = tuple[str, str]


@dataclass(frozen=True)
class Mdp:
    """Finite-horizon MDP with stage-invariant kernel and costs.

    ``kernel[(x, u)]`` holds the positive-probability successors of ``(x, u)``
    as ``(next_state, prob)`` sorted by label. Time dependence, when needed, is
    encoded in the state labels.
    """

    states: tuple[str, ...]
    admissible: Mapping[str, tuple[str, ...]]
    kernel: Mapping[Pair, tuple[tuple[str, float], ...]]
    cost_c: Mapping[Pair, float]
    cost_d: Mapping[Pair, float]
    horizon: int
    initial_state: str = ""
    actions: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.states:
            raise ScenarioError("state set is empty")
        if len(set(self.states)) != len(self.states):
            raise ScenarioError("duplicate state labels")
        if not isinstance(self.horizon, int) or self.horizon < 1:
            raise ScenarioError(f"horizon must be an integer >= 1, got {self.horizon!r}")
        if not self.initial_state:
            object.__setattr__(self, "initial_state", self.states[0])
        if self.initial_state not in self.states:
            raise ScenarioError(f"initial state {self.initial_state!r} is not a state")
        union = sorted({u for x in self.states for u in self.admissible.get(x, ())})
        if not self.actions:
            object.__setattr__(self, "actions", tuple(union))
        known = set(self.states)
        for x in self.states:
            acts = self.admissible.get(x, ())
            if not acts:
                raise EmptyAdmissibleSet(f"state {x!r} has no admissible action")
            if not set(acts) <= set(self.actions):
                raise ScenarioError(f"admissible actions of {x!r} are not all in U")
            for u in acts:
                row = self.kernel.get((x, u))
                total = math.fsum(p for _, p in row) if row else 0.0
                if row is None or abs(total - 1.0) > PROB_TOL:
                    raise ProbabilityRowNotNormalized(x, u, total)
                for y, p in row:
                    if y not in known:
                        raise ScenarioError(f"transition ({x!r}, {u!r}) -> unknown state {y!r}")
                    if p <= 0:
                        raise ScenarioError(f"kernel row ({x!r}, {u!r}) stores non-positive mass")
                for name, table in (("cost_c", self.cost_c), ("cost_d", self.cost_d)):
                    v = table.get((x, u))
                    if v is None or not math.isfinite(v):
                        raise UndefinedCost(f"{name} undefined for ({x!r}, {u!r})")
        object.__setattr__(self, "admissible", MappingProxyType(dict(self.admissible)))
        object.__setattr__(self, "kernel", MappingProxyType(dict(self.kernel)))
        object.__setattr__(self, "cost_c", MappingProxyType(dict(self.cost_c)))
        object.__setattr__(self, "cost_d", MappingProxyType(dict(self.cost_d)))

    def successors(self, x: str, u: str) -> tuple[tuple[str, float], ...]:
        return self.kernel[(x, u)]

    def c(self, x: str, u: str) -> float:
        return self.cost_c[(x, u)]

    def d(self, x: str, u: str) -> float:
        return self.cost_d[(x, u)]

    def check_state(self, x: str) -> None:
        if x not in self.admissible:
            raise StateUnknown(f"unknown state {x!r}")

    def pairs(self) -> Iterator[Pair]:
        for x in self.states:
            for u in self.admissible[x]:
                yield x, u


def _records(raw: Mapping, key: str) -> list:
    value = raw[key]
    if not isinstance(value, list):
        raise ScenarioError(f"{key!r} must be a list of records")
    for rec in value:
        if not isinstance(rec, Mapping):
            raise ScenarioError(f"{key!r} entries must be records, got {rec!r}")
    return value


def _field(rec: Mapping, name: str, where: str):
    if name not in rec:
        raise MissingField(f"{where}: record {dict(rec)!r} lacks {name!r}")
    return rec[name]


def validate_scenario(raw: Mapping) -> Mdp:
    """Build a validated :class:`Mdp` from a parsed scenario document."""
    if not isinstance(raw, Mapping):
        raise ScenarioError("scenario document must be a mapping")
    unknown = sorted(set(raw) - set(REQUIRED_KEYS) - set(OPTIONAL_KEYS))
    if unknown:
        raise UnknownField(f"unknown scenario keys: {', '.join(unknown)}")
    for key in REQUIRED_KEYS:
        if key not in raw:
            raise MissingField(f"scenario lacks required key {key!r}")

    horizon = raw["horizon"]
    if isinstance(horizon, bool) or not isinstance(horizon, int):
        raise ScenarioError(f"horizon must be an integer, got {horizon!r}")
    states = raw["states"]
    if not isinstance(states, list) or not all(isinstance(s, str) for s in states):
        raise ScenarioError("'states' must be a list of string labels")
    known = set(states)

    actions_raw = raw["actions"]
    if not isinstance(actions_raw, Mapping):
        raise ScenarioError("'actions' must map state -> list of action labels")
    admissible: dict[str, tuple[str, ...]] = {}
    for x in states:
        acts = actions_raw.get(x)
        if acts is None:
            raise MissingField(f"'actions' has no entry for state {x!r}")
        if not isinstance(acts, list) or not all(isinstance(a, str) for a in acts):
            raise ScenarioError(f"actions of {x!r} must be a list of labels")
        if not acts:
            raise EmptyAdmissibleSet(f"state {x!r} has no admissible action")
        if len(set(acts)) != len(acts):
            raise ScenarioError(f"duplicate action labels at {x!r}")
        admissible[x] = tuple(sorted(acts))
    stray = sorted(set(actions_raw) - known)
    if stray:
        raise StateUnknown(f"'actions' names unknown states: {', '.join(stray)}")

    rows: dict[Pair, dict[str, float]] = {pair: {} for x in states for pair in ((x, u) for u in admissible[x])}
    for rec in _records(raw, "transitions"):
        x = _field(rec, "from", "transitions")
        u = _field(rec, "action", "transitions")
        y = _field(rec, "to", "transitions")
        p = float(_field(rec, "prob", "transitions"))
        extra = set(rec) - {"from", "action", "to", "prob"}
        if extra:
            raise UnknownField(f"transition record has unknown keys {sorted(extra)}")
        if x not in known or y not in known:
            raise StateUnknown(f"transition {x!r} -> {y!r} references an unknown state")
        if (x, u) not in rows:
            raise ScenarioError(f"transition from ({x!r}, {u!r}): action not admissible")
        if p < 0 or not math.isfinite(p):
            raise ScenarioError(f"transition ({x!r}, {u!r}) -> {y!r} has invalid probability {p}")
        if y in rows[(x, u)]:
            raise ScenarioError(f"duplicate transition ({x!r}, {u!r}) -> {y!r}")
        rows[(x, u)][y] = p
    kernel = {}
    for (x, u), row in rows.items():
        total = math.fsum(row.values())
        if abs(total - 1.0) > PROB_TOL:
            raise ProbabilityRowNotNormalized(x, u, total)
        kernel[(x, u)] = tuple((y, p) for y, p in sorted(row.items()) if p > 0)

    costs = {}
    for key in ("cost_c", "cost_d"):
        table: dict[Pair, float] = {}
        for rec in _records(raw, key):
            x = _field(rec, "state", key)
            u = _field(rec, "action", key)
            v = float(_field(rec, "value", key))
            if (x, u) not in rows:
                raise ScenarioError(f"{key} given for non-admissible pair ({x!r}, {u!r})")
            if (x, u) in table:
                raise ScenarioError(f"duplicate {key} entry for ({x!r}, {u!r})")
            table[(x, u)] = v
        for pair in rows:
            if pair not in table:
                raise UndefinedCost(f"{key} undefined for {pair!r}")
        costs[key] = table

    initial = raw.get("initial_state", states[0] if states else "")
    return Mdp(
        states=tuple(states),
        admissible=admissible,
        kernel=kernel,
        cost_c=costs["cost_c"],
        cost_d=costs["cost_d"],
        horizon=horizon,
        initial_state=initial,
    )


def mdp_to_document(mdp: Mdp) -> dict:
    """Inverse of :func:`validate_scenario` for the MDP part of a scenario."""
    return {
        "horizon": mdp.horizon,
        "states": list(mdp.states),
        "initial_state": mdp.initial_state,
        "actions": {x: list(mdp.admissible[x]) for x in mdp.states},
        "transitions": [
            {"from": x, "action": u, "to": y, "prob": p}
            for x, u in mdp.pairs()
            for y, p in mdp.successors(x, u)
        ],
        "cost_c": [{"state": x, "action": u, "value": mdp.c(x, u)} for x, u in mdp.pairs()],
        "cost_d": [{"state": x, "action": u, "value": mdp.d(x, u)} for x, u in mdp.pairs()],
    }


@dataclass(frozen=True)
class History:
    """Alternating ``(x_k, u_k, ..., x_j)`` rooted at ``start_stage``."""

    entries: tuple[str, ...]
    start_stage: int = 0

    @property
    def stage(self) -> int:
        return self.start_stage + len(self.entries) // 2

    @property
    def state(self) -> str:
        return self.entries[-1]

    @property
    def states(self) -> tuple[str, ...]:
        return self.entries[::2]

    @property
    def actions(self) -> tuple[str, ...]:
        return self.entries[1::2]

    def extend(self, action: str, state: str) -> "History":
        return History(self.entries + (action, state), self.start_stage)

    def __str__(self) -> str:
        return ">".join(self.entries)


# (action, ((successor, subtree), ...)); None past the horizon.
DecisionTree = tuple


class HistoryPolicy:
    """Deterministic history-dependent policy.

    Wraps either a callable ``History -> action`` or a mapping from
    ``History.entries`` tuples to actions.
    """

    def __init__(self, rule: Callable[[History], str | None] | Mapping[tuple[str, ...], str], name: str = ""):
        if isinstance(rule, Mapping):
            table = dict(rule)
            self._rule = lambda h: table.get(h.entries)
            self.table: dict | None = table
        else:
            self._rule = rule
            self.table = None
        self.name = name

    def __call__(self, history: History) -> str:
        u = self._rule(history)
        if u is None:
            raise PolicyUndefinedOnHistory(str(history))
        return u

    def __repr__(self) -> str:
        return f"HistoryPolicy({self.name or '<rule>'})"

    @classmethod
    def markov(cls, mdp: Mdp, choice: Mapping, name: str = "") -> "HistoryPolicy":
        """Policy acting on the current state only.

        ``choice`` is keyed by state label or by ``(stage, state)``; states with a
        single admissible action need no entry.
        """

        def rule(h: History) -> str | None:
            x = h.state
            u = choice.get((h.stage, x), choice.get(x))
            if u is None and len(mdp.admissible.get(x, ())) == 1:
                u = mdp.admissible[x][0]
            return u

        return cls(rule, name=name)

    @classmethod
    def from_tree(cls, tree: DecisionTree, root: str, start_stage: int = 0, name: str = "") -> "HistoryPolicy":
        table: dict[tuple[str, ...], str] = {}

        def fill(entries: tuple[str, ...], node) -> None:
            if node is None:
                return
            u, children = node
            table[entries] = u
            for y, sub in children:
                fill(entries + (u, y), sub)

        fill((root,), tree)
        return cls(table, name=name)


@dataclass(frozen=True)
class PolicyNode:
    """Node of the positive-probability tree a policy induces."""

    history: History
    action: str | None
    children: tuple[tuple[str, float, "PolicyNode"], ...]

    @property
    def state(self) -> str:
        return self.history.state

    @property
    def stage(self) -> int:
        return self.history.stage

    def walk(self) -> Iterator["PolicyNode"]:
        yield self
        for _, _, child in self.children:
            yield from child.walk()


def policy_tree(mdp: Mdp, policy: Callable[[History], str], state: str, stage: int = 0,
                prefix: Sequence[str] = ()) -> PolicyNode:
    """Unfold ``policy`` from ``(state, stage)`` into its reachable tree.

    ``prefix`` is an optional history leading to ``state`` (it must end with
    ``state``); the policy is then queried on ``prefix``-extended histories.
    """
    mdp.check_state(state)
    if not 0 <= stage <= mdp.horizon:
        raise ValueError(f"stage {stage} outside 0..{mdp.horizon}")
    if prefix:
        if prefix[-1] != state:
            raise ValueError("history prefix must end at the starting state")
        root = History(tuple(prefix), stage - len(prefix) // 2)
    else:
        root = History((state,), stage)

    def build(h: History) -> PolicyNode:
        if h.stage >= mdp.horizon:
            return PolicyNode(h, None, ())
        u = policy(h)
        if u not in mdp.admissible[h.state]:
            raise PolicyUndefinedOnHistory(str(h), f"action {u!r} not admissible")
        kids = tuple((y, p, build(h.extend(u, y))) for y, p in mdp.successors(h.state, u))
        return PolicyNode(h, u, kids)

    return build(root)


class WeightedHistory(NamedTuple):
    history: History
    probability: float


def enumerate_histories(mdp: Mdp, from_state: str, from_stage: int = 0,
                        policy: Callable[[History], str] | None = None) -> list[WeightedHistory]:
    """Positive-probability histories from ``(from_state, from_stage)`` to stage N.

    With ``policy=None`` every admissible action is branched on; otherwise the
    policy picks one action per history.
    """
    mdp.check_state(from_state)
    if not 0 <= from_stage <= mdp.horizon:
        raise ValueError(f"stage {from_stage} outside 0..{mdp.horizon}")
    out: list[WeightedHistory] = []
    stack = [(History((from_state,), from_stage), 1.0)]
    while stack:
        h, prob = stack.pop()
        if h.stage >= mdp.horizon:
            out.append(WeightedHistory(h, prob))
            continue
        acts = mdp.admissible[h.state] if policy is None else (policy(h),)
        for u in reversed(acts):
            if u not in mdp.admissible[h.state]:
                raise PolicyUndefinedOnHistory(str(h), f"action {u!r} not admissible")
            for y, p in reversed(mdp.successors(h.state, u)):
                stack.append((h.extend(u, y), prob * p))
    return out
