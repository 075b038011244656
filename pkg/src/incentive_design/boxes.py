"""Closed-interval state boxes and projection (clamping) utilities.

Every model quantity lives in a closed interval; updates are projected back
into their box and each projection event can be counted through a ClampLog.
"""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (self.lo <= self.hi):
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol

    def clamp(self, x: float) -> float:
        if x < self.lo:
            return self.lo
        if x > self.hi:
            return self.hi
        return x


class ClampLog:
    """Counts projection events by quantity name."""

    def __init__(self) -> None:
        self.counts: dict[str, int] = {}

    def record(self, name: str) -> None:
        self.counts[name] = self.counts.get(name, 0) + 1

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def project(x: float, box: Interval, name: str, log: ClampLog | None = None) -> float:
    y = box.clamp(x)
    if y != x and log is not None:
        log.record(name)
    return y


@dataclass(frozen=True)
class Boxes:
    """State boxes: weight (lbs), daily calories (kcal), motivation values,
    probabilities, weekly reward (dollars), and gain constants."""

    W: Interval = field(default_factory=lambda: Interval(90.0, 400.0))
    F: Interval = field(default_factory=lambda: Interval(800.0, 4000.0))
    A_set: Interval = field(default_factory=lambda: Interval(0.0, 10.0))
    R: Interval = field(default_factory=lambda: Interval(0.0, 30.0))
    K: Interval = field(default_factory=lambda: Interval(0.0, 5.0))
    eps: float = 0.05

    def __post_init__(self) -> None:
        if not (0.0 < self.eps < 0.5):
            raise ValueError("eps must satisfy 0 < eps < 0.5")
        for name in ("W", "F", "R"):
            if getattr(self, name).lo < 0:
                raise ValueError(f"{name} lower bound must be >= 0")
        if self.A_set.lo < 0 or self.K.lo < 0:
            raise ValueError("A_set and K must be nonnegative intervals")

    @property
    def P(self) -> Interval:
        return Interval(self.eps, 1.0 - self.eps)
