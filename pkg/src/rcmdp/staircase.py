"""Exact non-increasing step functions over the risk-threshold axis."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

TOL = 1e-9
INF = math.inf


@dataclass(frozen=True)
class ThresholdValueFunction:
    """``V(r) = v_i`` on ``[b_i, b_{i+1})``, ``+inf`` below ``b_0``.

    Breakpoints strictly increase and values strictly decrease. An empty
    breakpoint list is the function that is ``+inf`` everywhere.
    Threshold lookups accept ``r`` up to ``TOL`` below a breakpoint.
    """

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.breakpoints) != len(self.values):
            raise ValueError("breakpoints and values differ in length")
        for a, b in zip(self.breakpoints, self.breakpoints[1:]):
            if not b > a:
                raise ValueError(f"breakpoints not strictly increasing: {self.breakpoints}")
        for a, b in zip(self.values, self.values[1:]):
            if not b < a:
                raise ValueError(f"values not strictly decreasing: {self.values}")
        if any(not math.isfinite(x) for x in self.breakpoints + self.values):
            raise ValueError("staircase entries must be finite")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]]) -> "ThresholdValueFunction":
        pairs = list(pairs)
        return cls(tuple(float(b) for b, _ in pairs), tuple(float(v) for _, v in pairs))

    @classmethod
    def zero(cls) -> "ThresholdValueFunction":
        """Terminal value: 0 on ``[0, inf)``."""
        return cls((0.0,), (0.0,))

    @classmethod
    def infeasible(cls) -> "ThresholdValueFunction":
        return cls((), ())

    @classmethod
    def envelope(cls, points: Sequence[tuple[float, float]]) -> "ThresholdValueFunction":
        """Lower-left envelope of ``(threshold, value)`` points: ``V(r) = min{v : b <= r}``."""
        pts = sorted(points)
        kept = sweep_envelope([b for b, _ in pts], [v for _, v in pts])
        return cls.from_pairs((b, v) for b, v, _ in kept)

    @property
    def floor(self) -> float:
        return self.breakpoints[0] if self.breakpoints else INF

    @property
    def is_infeasible(self) -> bool:
        return not self.breakpoints

    def index(self, r: float) -> int:
        """Index of the largest breakpoint ``<= r + TOL``, or -1."""
        return bisect.bisect_right(self.breakpoints, r + TOL) - 1

    def __call__(self, r: float) -> float:
        i = self.index(r)
        return INF if i < 0 else self.values[i]

    def evaluate(self, r: np.ndarray) -> np.ndarray:
        if not self.breakpoints:
            return np.full(np.shape(r), INF)
        idx = np.searchsorted(np.asarray(self.breakpoints), np.asarray(r) + TOL, side="right") - 1
        vals = np.asarray(self.values)[np.maximum(idx, 0)]
        return np.where(idx >= 0, vals, INF)

    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.breakpoints, self.values))

    def __len__(self) -> int:
        return len(self.breakpoints)

    def allclose(self, other: "ThresholdValueFunction", tol: float = TOL) -> bool:
        if len(self) != len(other):
            return False
        return all(
            abs(a - b) <= tol and abs(v - w) <= tol
            for (a, v), (b, w) in zip(self.pairs(), other.pairs())
        )


def sweep_envelope(thresholds: Sequence[float], values: Sequence[float]) -> list[tuple[float, float, int]]:
    """Staircase breakpoints of candidates already sorted by threshold.

    Returns ``(breakpoint, value, candidate_index)``. Among candidates whose
    thresholds agree within ``TOL`` the lower value wins, and the earliest
    candidate wins an exact tie, so the caller's sort order is the tie-break.
    """
    kept: list[tuple[float, float, int]] = []
    for i, (b, v) in enumerate(zip(thresholds, values)):
        if not math.isfinite(v):
            continue
        if kept and b <= kept[-1][0] + TOL:
            if v < kept[-1][1] - TOL:
                kept[-1] = (kept[-1][0], v, i)
            continue
        if not kept or v < kept[-1][1] - TOL:
            kept.append((b, v, i))
    return kept
