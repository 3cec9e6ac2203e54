"""Exact rational intervals and shifted dyadic intervals.

A shifted dyadic interval at scale ``j`` with offset ``k`` and shift
``alpha`` in {0, 1/3, 2/3} is

    2**j * (k + [0, 1) + (-1)**j * alpha).

The alternating sign keeps each shifted mesh nested across scales, so every
interval has a unique parent in the same mesh.  All endpoints are
``fractions.Fraction`` so that membership, inclusion and length comparisons
are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

Number = Union[int, float, Fraction]

SHIFTS = (Fraction(0), Fraction(1, 3), Fraction(2, 3))


def as_fraction(x: Number) -> Fraction:
    """Exact rational value of ``x`` (floats are converted without rounding)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(float(x))


def pow2(j: int) -> Fraction:
    return Fraction(2) ** j


def _shift_fraction(alpha: Number) -> Fraction:
    a = as_fraction(alpha) % 1
    if a not in SHIFTS:
        # accept float thirds such as 1/3 written as 0.333...
        near = min(SHIFTS, key=lambda s: abs(float(s) - float(a)))
        if abs(float(near) - float(a)) > 1e-12:
            raise ValueError(f"shift must be one of 0, 1/3, 2/3; got {alpha!r}")
        a = near
    return a


class _IntervalOps:
    """Geometry shared by plain and dyadic intervals (half-open [left, right))."""

    left: Fraction
    right: Fraction

    @property
    def length(self) -> Fraction:
        return self.right - self.left

    @property
    def center(self) -> Fraction:
        return (self.left + self.right) / 2

    def contains(self, x: Number) -> bool:
        x = as_fraction(x)
        return self.left <= x < self.right

    def issubset(self, other: "_IntervalOps") -> bool:
        return other.left <= self.left and self.right <= other.right

    def is_proper_subset(self, other: "_IntervalOps") -> bool:
        return self.issubset(other) and (self.left, self.right) != (other.left, other.right)

    def intersects(self, other: "_IntervalOps") -> bool:
        return max(self.left, other.left) < min(self.right, other.right)

    def dilate(self, factor: Number) -> "Interval":
        """Interval with the same center and ``factor`` times the length."""
        half = self.length * as_fraction(factor) / 2
        c = self.center
        return Interval(c - half, c + half)

    def same_set(self, other: "_IntervalOps") -> bool:
        return self.left == other.left and self.right == other.right

    def distance(self, x: float) -> float:
        """Distance on the real line from ``x`` to the closure of the interval."""
        a, b = float(self.left), float(self.right)
        return max(a - x, 0.0, x - b)


@dataclass(frozen=True, order=True)
class Interval(_IntervalOps):
    left: Fraction
    right: Fraction

    def __post_init__(self):
        object.__setattr__(self, "left", as_fraction(self.left))
        object.__setattr__(self, "right", as_fraction(self.right))
        if self.right <= self.left:
            raise ValueError("empty interval")

    def to_json(self):
        return {"left": frac_to_json(self.left), "right": frac_to_json(self.right)}


@dataclass(frozen=True, order=True)
class DyadicInterval(_IntervalOps):
    scale: int
    offset: int
    shift: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "scale", int(self.scale))
        object.__setattr__(self, "offset", int(self.offset))
        object.__setattr__(self, "shift", _shift_fraction(self.shift))

    @property
    def signed_shift(self) -> Fraction:
        return self.shift if self.scale % 2 == 0 else -self.shift

    @property
    def left(self) -> Fraction:  # type: ignore[override]
        return pow2(self.scale) * (self.offset + self.signed_shift)

    @property
    def right(self) -> Fraction:  # type: ignore[override]
        return self.left + pow2(self.scale)

    @classmethod
    def containing(cls, x: Number, scale: int, shift: Number = 0) -> "DyadicInterval":
        """The unique interval of the given mesh and scale whose half-open span holds ``x``."""
        shift = _shift_fraction(shift)
        signed = shift if scale % 2 == 0 else -shift
        k = math.floor(as_fraction(x) / pow2(scale) - signed)
        return cls(scale, k, shift)

    def parent(self) -> "DyadicInterval":
        return DyadicInterval.containing(self.left, self.scale + 1, self.shift)

    def children(self) -> tuple["DyadicInterval", "DyadicInterval"]:
        lo = DyadicInterval.containing(self.left, self.scale - 1, self.shift)
        return lo, DyadicInterval(lo.scale, lo.offset + 1, lo.shift)

    def as_interval(self) -> Interval:
        return Interval(self.left, self.right)

    def to_json(self):
        return {"scale": self.scale, "offset": self.offset, "shift": frac_to_json(self.shift)}

    @classmethod
    def from_json(cls, d) -> "DyadicInterval":
        return cls(d["scale"], d["offset"], frac_from_json(d["shift"]))


def frac_to_json(x: Fraction) -> list[int]:
    return [x.numerator, x.denominator]


def frac_from_json(v) -> Fraction:
    if isinstance(v, (list, tuple)):
        return Fraction(int(v[0]), int(v[1]))
    return as_fraction(v)
