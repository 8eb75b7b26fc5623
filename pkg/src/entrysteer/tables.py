"""Piecewise-linear lookup tables used for atmosphere profiles and bank schedules."""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field


@dataclass(frozen=True)
class PiecewiseLinear:
    """Piecewise-linear function of one variable, clamped outside the breakpoints.

    Breakpoints must be strictly increasing.  Evaluation outside the table
    holds the first/last value constant, so the derivative there is zero.
    """

    x: tuple[float, ...]
    y: tuple[float, ...]
    _slopes: tuple[float, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.x) != len(self.y):
            raise ValueError("breakpoint and value counts differ")
        if len(self.x) < 1:
            raise ValueError("empty table")
        if any(b <= a for a, b in zip(self.x, self.x[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        slopes = tuple(
            (self.y[i + 1] - self.y[i]) / (self.x[i + 1] - self.x[i])
            for i in range(len(self.x) - 1)
        )
        object.__setattr__(self, "_slopes", slopes)

    def __call__(self, xq: float) -> float:
        if xq <= self.x[0]:
            return self.y[0]
        if xq >= self.x[-1]:
            return self.y[-1]
        i = bisect_right(self.x, xq) - 1
        return self.y[i] + self._slopes[i] * (xq - self.x[i])

    def derivative(self, xq: float) -> float:
        """Slope at ``xq``; zero in the clamped regions and, by convention,
        the right segment's slope exactly at an interior breakpoint."""
        if xq <= self.x[0] or xq >= self.x[-1]:
            return 0.0
        i = bisect_right(self.x, xq) - 1
        return self._slopes[i]


@dataclass(frozen=True)
class StepTable:
    """Right-continuous step function: value y[i+1] on [x[i], x[i+1]), y[0]
    below the first breakpoint, y[-1] from the last breakpoint up."""

    x: tuple[float, ...]
    y: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.y) != len(self.x) + 1:
            raise ValueError("need one more value than breakpoints")
        if any(b <= a for a, b in zip(self.x, self.x[1:])):
            raise ValueError("breakpoints must be strictly increasing")

    def __call__(self, xq: float) -> float:
        return self.y[bisect_right(self.x, xq)]
