"""Scenario documents: loading, saving, shipped fixtures and random instances."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import MissingField, ScenarioError
from .mdp import Mdp, mdp_to_document, validate_scenario
from .risk import CVaR, Expectation, OneStepMeasure, RiskMeasureSpec, WorstCase

FIXTURES = ("squander_save", "variance", "avar", "trivial")


@dataclass(frozen=True)
class Reference:
    """A published result attached to a scenario for side-by-side reporting."""

    r0: float
    value: float
    policy: Mapping[str, str]
    note: str = ""

    @classmethod
    def from_document(cls, raw: Mapping) -> "Reference":
        if not isinstance(raw, Mapping):
            raise ScenarioError("'reference' must be a record")
        extra = set(raw) - {"r0", "value", "policy", "note"}
        if extra:
            raise ScenarioError(f"'reference' has unknown keys {sorted(extra)}")
        for key in ("r0", "value", "policy"):
            if key not in raw:
                raise MissingField(f"'reference' lacks {key!r}")
        return cls(float(raw["r0"]), float(raw["value"]), dict(raw["policy"]), str(raw.get("note", "")))

    def to_document(self) -> dict:
        doc = {"r0": self.r0, "value": self.value, "policy": dict(self.policy)}
        if self.note:
            doc["note"] = self.note
        return doc


@dataclass(frozen=True)
class Scenario:
    mdp: Mdp
    risk: RiskMeasureSpec
    r0: float | None
    name: str = ""
    reference: Reference | None = field(default=None, compare=False)

    @classmethod
    def from_document(cls, raw: Mapping, name: str = "") -> "Scenario":
        mdp = validate_scenario(raw)
        risk = RiskMeasureSpec.from_document(raw.get("risk", {"kind": "expectation"}), mdp.horizon)
        r0 = raw.get("r0")
        if r0 is not None:
            r0 = float(r0)
        ref = Reference.from_document(raw["reference"]) if "reference" in raw else None
        return cls(mdp, risk, r0, str(raw.get("name", name)), ref)

    def to_document(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"name": self.name} if self.name else {}
        doc.update(mdp_to_document(self.mdp))
        doc["risk"] = self.risk.to_document()
        if self.r0 is not None:
            doc["r0"] = self.r0
        if self.reference is not None:
            doc["reference"] = self.reference.to_document()
        return doc


def _fixture_text(name: str) -> str:
    return resources.files("rcmdp").joinpath("fixtures", f"{name}.json").read_text(encoding="utf-8")


def resolve_scenario_path(spec: str) -> tuple[str, str]:
    """Return ``(document text, scenario name)`` for a path or fixture reference.

    Accepts a file path (``.json`` may be omitted), ``fixtures/<name>`` or a
    bare shipped fixture name.
    """
    p = Path(spec)
    for candidate in (p, p.with_name(p.name + ".json")):
        if candidate.is_file():
            return candidate.read_text(encoding="utf-8"), candidate.stem
    name = p.stem
    if name in FIXTURES and (len(p.parts) == 1 or p.parent.name == "fixtures"):
        return _fixture_text(name), name
    raise FileNotFoundError(f"no scenario file or fixture named {spec!r}")


def load_scenario(spec: str) -> Scenario:
    text, name = resolve_scenario_path(spec)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    return Scenario.from_document(raw, name=name)


def load_fixture(name: str) -> Scenario:
    return Scenario.from_document(json.loads(_fixture_text(name)), name=name)


def dump_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario.to_document(), indent=2) + "\n", encoding="utf-8")


def build_scenario(name, states, actions, rows, costs, horizon, risk, r0, reference=None) -> Scenario:
    """``rows``: (x, u) -> {y: p}; ``costs``: (x, u) -> (c, d)."""
    doc = {
        "name": name,
        "horizon": horizon,
        "states": states,
        "actions": actions,
        "transitions": [
            {"from": x, "action": u, "to": y, "prob": p}
            for (x, u), row in rows.items() for y, p in row.items()
        ],
        "cost_c": [{"state": x, "action": u, "value": cd[0]} for (x, u), cd in costs.items()],
        "cost_d": [{"state": x, "action": u, "value": cd[1]} for (x, u), cd in costs.items()],
        "risk": risk,
        "r0": r0,
    }
    if reference is not None:
        doc["reference"] = reference
    return Scenario.from_document(doc)


def squander_save(win_prob: float = 0.1, r0: float = 0.3) -> Scenario:
    """Lottery with a follow-up choice: after winning or losing, squander or save."""
    outcomes = ("win", "lose")
    terminal = [f"{o}_{a}" for o in outcomes for a in ("squander", "save")]
    states = ["root", *outcomes, *terminal]
    actions = {"root": ["none"], "win": ["squander", "save"], "lose": ["squander", "save"]}
    actions.update({t: ["stay"] for t in terminal})
    rows = {("root", "none"): {"win": win_prob, "lose": 1.0 - win_prob}}
    costs = {("root", "none"): (0.0, 0.0)}
    table = {
        ("win", "squander"): (-50.0, 1.0),
        ("win", "save"): (-30.0, 0.05),
        ("lose", "squander"): (-20.0, 0.4),
        ("lose", "save"): (-10.0, 0.2),
    }
    for (x, u), cd in table.items():
        rows[(x, u)] = {f"{x}_{u}": 1.0}
        costs[(x, u)] = cd
    for t in terminal:
        rows[(t, "stay")] = {t: 1.0}
        costs[(t, "stay")] = (0.0, 0.0)
    reference = {
        "r0": 0.3,
        "value": -12.0,
        "policy": {"win": "save", "lose": "save"},
        "note": "published stage-0 value and save/save plan for r0 = 0.3",
    }
    return build_scenario("squander_save", states, actions, rows, costs, 2, {"kind": "expectation"}, r0, reference)


def variance_instance() -> Scenario:
    """Two-policy variance example; c equals d throughout.

    The random first-stage cost (0 or 10 with probability 1/2 each) is carried by
    the pass-through states ``e0`` / ``e10``; the decision happens in ``s1``.
    Policy pi1 keeps (cost 10) in ``s1``, pi2 incurs (cost 20).
    """
    states = ["s0", "e0", "e10", "s1", "s2", "t"]
    actions = {"s0": ["go"], "e0": ["pay"], "e10": ["pay"], "s1": ["keep", "incur"], "s2": ["keep"], "t": ["stay"]}
    rows = {
        ("s0", "go"): {"e0": 0.5, "e10": 0.5},
        ("e0", "pay"): {"s1": 1.0},
        ("e10", "pay"): {"s2": 1.0},
        ("s1", "keep"): {"t": 1.0},
        ("s1", "incur"): {"t": 1.0},
        ("s2", "keep"): {"t": 1.0},
        ("t", "stay"): {"t": 1.0},
    }
    cost = {("s0", "go"): 0.0, ("e0", "pay"): 0.0, ("e10", "pay"): 10.0, ("s1", "keep"): 10.0,
            ("s1", "incur"): 20.0, ("s2", "keep"): 10.0, ("t", "stay"): 0.0}
    costs = {k: (v, v) for k, v in cost.items()}
    return build_scenario("variance", states, actions, rows, costs, 3, {"kind": "expectation"}, 15.0)


AVAR_LEAF_COSTS = {"l11": 10.0, "l12": -11.0, "l21": -1.0, "l22": -2.0}


def avar_instance(leaf_costs: Mapping[str, float] | None = None) -> Scenario:
    """Single-policy two-stage tree with terminal constraint costs at the leaves.

    Terminal costs are charged as the stage-2 cost of the leaf's only action,
    so the horizon is 3. Objective costs are zero.
    """
    leaf_costs = dict(AVAR_LEAF_COSTS if leaf_costs is None else leaf_costs)
    leaves = ["l11", "l12", "l21", "l22"]
    states = ["s0", "s1", "s2", *leaves, "done"]
    actions = {x: ["go"] for x in ("s0", "s1", "s2")}
    actions.update({x: ["end"] for x in leaves})
    actions["done"] = ["stay"]
    rows = {
        ("s0", "go"): {"s1": 0.5, "s2": 0.5},
        ("s1", "go"): {"l11": 1 / 3, "l12": 2 / 3},
        ("s2", "go"): {"l21": 0.5, "l22": 0.5},
        ("done", "stay"): {"done": 1.0},
    }
    costs = {(x, "go"): (0.0, 0.0) for x in ("s0", "s1", "s2")}
    costs[("done", "stay")] = (0.0, 0.0)
    for leaf in leaves:
        rows[(leaf, "end")] = {"done": 1.0}
        costs[(leaf, "end")] = (0.0, leaf_costs[leaf])
    return build_scenario("avar", states, actions, rows, costs, 3, {"kind": "cvar", "alpha": 1 / 3}, 0.0)


def trivial() -> Scenario:
    return build_scenario("trivial", ["x"], {"x": ["stay"]}, {("x", "stay"): {"x": 1.0}},
                  {("x", "stay"): (0.0, 0.0)}, 1, {"kind": "expectation"}, 0.0)


BUILDERS = {"squander_save": squander_save, "variance": variance_instance, "avar": avar_instance, "trivial": trivial}


RANDOM_MEASURES: tuple[OneStepMeasure, ...] = (Expectation(), CVaR(0.1), CVaR(0.33), CVaR(0.9), WorstCase())


def random_scenario(seed: int, measure: OneStepMeasure | None = None, max_states: int = 6,
                    max_actions: int = 3, max_horizon: int = 3, max_support: int = 2) -> Scenario:
    """Seeded random instance for property tests.

    Costs and probabilities live on coarse grids so ties and boundary cases
    occur. ``r0`` is drawn among: just below the risk floor, the floor itself,
    a point between floor and the maximal risk, and above the maximal risk.
    """
    from .dp import compute_feasibility_bounds  # local: dp imports this package's core only

    rng = np.random.default_rng(seed)
    n_states = int(rng.integers(2, max_states + 1))
    horizon = int(rng.integers(1, max_horizon + 1))
    states = [f"x{i}" for i in range(n_states)]
    labels = [f"a{j}" for j in range(max_actions)]
    actions, rows, costs = {}, {}, {}
    for x in states:
        acts = sorted(rng.choice(labels, size=int(rng.integers(1, max_actions + 1)), replace=False).tolist())
        actions[x] = acts
        for u in acts:
            k = int(rng.integers(1, min(max_support, n_states) + 1))
            succ = sorted(rng.choice(states, size=k, replace=False).tolist())
            cuts = np.sort(rng.choice(np.arange(1, 10), size=k - 1, replace=False)) / 10.0
            probs = np.diff(np.concatenate(([0.0], cuts, [1.0])))
            rows[(x, u)] = {y: round(float(p), 10) for y, p in zip(succ, probs)}
            costs[(x, u)] = (float(rng.integers(-5, 6)), float(rng.integers(0, 11)) / 10.0)
    measure = measure if measure is not None else RANDOM_MEASURES[seed % len(RANDOM_MEASURES)]
    base = build_scenario(f"random-{seed}", states, actions, rows, costs, horizon, measure.to_document(), 0.0)
    bounds = compute_feasibility_bounds(base.mdp, base.risk)
    lo, hi = bounds.floor(0, states[0]), bounds.cap(0, states[0])
    choice = int(rng.integers(0, 4))
    r0 = [lo - 0.05, lo, lo + (hi - lo) * float(rng.uniform(0.2, 0.8)), hi + 0.5][choice]
    return Scenario(base.mdp, base.risk, float(r0), base.name)
