"""Outward-rounded interval scalars for certified bounds.

CertifiedValue carries machine floats lo <= true value <= hi.  Each operation
widens the result outward by at least the worst-case rounding of the
underlying IEEE arithmetic (one ulp per correctly-rounded operation, plus an
explicit envelope for exp, which libm does not guarantee correctly rounded).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# relative envelope absorbing libm exp error (<= ~1 ulp) with a wide margin
_EXP_PAD = 2.0**-50


def next_up(x: float) -> float:
    return math.nextafter(x, math.inf)


def next_down(x: float) -> float:
    return math.nextafter(x, -math.inf)


@dataclass(frozen=True)
class CertifiedValue:
    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi) or self.lo > self.hi:
            raise ValueError(f"invalid interval [{self.lo!r}, {self.hi!r}]")

    @classmethod
    def exact(cls, x) -> "CertifiedValue":
        x = float(x)
        return cls(x, x)

    @classmethod
    def from_fraction(cls, num: int, den: int) -> "CertifiedValue":
        lo = num / den
        # float division is correctly rounded; one ulp out on each side covers it
        return cls(next_down(lo), next_up(lo))

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def _coerce(self, other) -> "CertifiedValue":
        if isinstance(other, CertifiedValue):
            return other
        return CertifiedValue.exact(other)

    def __add__(self, other) -> "CertifiedValue":
        o = self._coerce(other)
        return CertifiedValue(next_down(self.lo + o.lo), next_up(self.hi + o.hi))

    __radd__ = __add__

    def __neg__(self) -> "CertifiedValue":
        return CertifiedValue(-self.hi, -self.lo)

    def __sub__(self, other) -> "CertifiedValue":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "CertifiedValue":
        return self._coerce(other) + (-self)

    def __mul__(self, other) -> "CertifiedValue":
        o = self._coerce(other)
        cands = (self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi)
        return CertifiedValue(next_down(min(cands)), next_up(max(cands)))

    __rmul__ = __mul__

    def reciprocal(self) -> "CertifiedValue":
        if self.lo <= 0.0 <= self.hi:
            raise ZeroDivisionError("reciprocal of an interval containing zero")
        return CertifiedValue(next_down(1.0 / self.hi), next_up(1.0 / self.lo))

    def __truediv__(self, other) -> "CertifiedValue":
        return self * self._coerce(other).reciprocal()

    def __rtruediv__(self, other) -> "CertifiedValue":
        return self._coerce(other) * self.reciprocal()

    def exp(self) -> "CertifiedValue":
        lo = math.exp(self.lo) * (1.0 - _EXP_PAD)
        hi = math.exp(self.hi) * (1.0 + _EXP_PAD)
        return CertifiedValue(next_down(lo), next_up(hi))

    def sqrt(self) -> "CertifiedValue":
        if self.lo < 0:
            raise ValueError("sqrt of an interval with negative lower bound")
        return CertifiedValue(next_down(math.sqrt(self.lo)), next_up(math.sqrt(self.hi)))

    def min(self, other) -> "CertifiedValue":
        o = self._coerce(other)
        return CertifiedValue(min(self.lo, o.lo), min(self.hi, o.hi))

    def max(self, other) -> "CertifiedValue":
        o = self._coerce(other)
        return CertifiedValue(max(self.lo, o.lo), max(self.hi, o.hi))

    def __repr__(self):
        return f"CertifiedValue({self.lo!r}, {self.hi!r})"


#: an interval containing pi (math.pi is the nearest double)
PI = CertifiedValue(next_down(math.pi), next_up(math.pi))


def cv_sum(values) -> CertifiedValue:
    """Interval sum combined in the given (fixed) order."""
    total = CertifiedValue.exact(0.0)
    for v in values:
        total = total + v
    return total
