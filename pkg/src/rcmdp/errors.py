"""Exception hierarchy shared by every rcmdp module."""

from __future__ import annotations


class RcmdpError(Exception):
    """Base class for all library errors."""


class ScenarioError(RcmdpError, ValueError):
    """A scenario document or MDP failed validation."""


class MissingField(ScenarioError):
    pass


class UnknownField(ScenarioError):
    pass


class ProbabilityRowNotNormalized(ScenarioError):
    def __init__(self, state: str, action: str, total: float):
        self.state = state
        self.action = action
        self.total = total
        super().__init__(
            f"transition row ({state!r}, {action!r}) sums to {total:.12g}, expected 1"
        )


class EmptyAdmissibleSet(ScenarioError):
    pass


class UndefinedCost(ScenarioError):
    pass


class InvalidRiskSpec(ScenarioError):
    pass


class StateUnknown(RcmdpError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else "unknown state"


class InvalidDistribution(RcmdpError, ValueError):
    pass


class PolicyUndefinedOnHistory(RcmdpError):
    def __init__(self, history, reason: str = "no decision"):
        self.history = history
        super().__init__(f"policy undefined on history {history}: {reason}")


class Infeasible(RcmdpError):
    """The risk threshold lies below the minimal achievable tail risk."""

    def __init__(self, floor: float, threshold: float | None = None, what: str = "problem"):
        self.floor = floor
        self.threshold = threshold
        msg = f"{what} infeasible: minimal achievable risk is {floor:.9g}"
        if threshold is not None:
            msg += f" > threshold {threshold:.9g}"
        super().__init__(msg)


class InfeasibleThreshold(Infeasible):
    pass


class PolicyInfeasibleAtThreshold(RcmdpError):
    def __init__(self, risk: float, threshold: float):
        self.risk = risk
        self.threshold = threshold
        super().__init__(f"policy risk {risk:.9g} exceeds threshold {threshold:.9g}")


class TooLarge(RcmdpError):
    def __init__(self, count: int, limit: int):
        self.count = count
        self.limit = limit
        super().__init__(f"{count} policies exceed the enumeration limit {limit}")
