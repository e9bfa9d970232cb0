"""One-step analytic recursions and threshold formulas.

Everything here is deterministic: expectations of binomial coefficients of the
offspring count come from exact factorial moments, never from sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

from .channel import ParameterError
from .gwtree import CustomPmf, OffspringDist, Poisson, Regular


class PoleError(ArithmeticError):
    """Evaluation at d <= 1 or d*lambda == 1, where the closed forms blow up."""


#: a family maps d to the factorial moments (m2, m3) = (E[X(X-1)], E[X(X-1)(X-2)])
MomentFamily = Callable[[float], tuple[float, float]]


def poisson_family(d: float) -> tuple[float, float]:
    return d * d, d * d * d


def regular_family(d: float) -> tuple[float, float]:
    return d * (d - 1.0), d * (d - 1.0) * (d - 2.0)


_FAMILIES = {"poisson": poisson_family, "regular": regular_family}


def _resolve_moments(dist, d: float) -> tuple[float, float]:
    """Factorial moments (m2, m3) for a dist instance, family name, or callable."""
    if isinstance(dist, str):
        try:
            return _FAMILIES[dist](d)
        except KeyError:
            raise ParameterError(f"unknown offspring family {dist!r}") from None
    if isinstance(dist, OffspringDist):
        return dist.m2, dist.m3
    if callable(dist):
        return dist(d)
    raise ParameterError(f"cannot take offspring moments from {dist!r}")


@dataclass(frozen=True)
class MomentTable:
    """The thirteen Y-moment identities as functions of (x, u, v, w, lambda, q).

    Entries named by the pattern of (Y_11 - 1/q) ("main") and (Y_i1 - 1/q)
    for i != 1 ("other") factors.  Entries whose formulas carry (q-2) or
    (q-3) denominators are None below the applicable q.
    """

    m1_main: float
    m1_other: float
    m2_main: float
    m2_other: float
    m2_main_other: float
    m2_other_other: float | None
    m3_main: float
    m3_other: float
    m3_main2_other: float
    m3_main_other2: float
    m3_main_other_other: float | None
    m3_other2_other: float | None
    m3_other_other_other: float | None

    def entry(self, name: str) -> float:
        val = getattr(self, name)
        if val is None:
            raise ParameterError(f"moment {name} is undefined at this q (small-q denominator)")
        return val


def y_moment_table(x: float, u: float, v: float, w: float, lam: float, q: int) -> MomentTable:
    """Evaluate the moment identities literally (with z = u + x/q)."""
    if q < 2:
        raise ParameterError("q must be >= 2")
    for val in (x, u, v, w, lam):
        if not math.isfinite(val):
            raise ParameterError("moment inputs must be finite")
    q = int(q)
    m2_other_other = None
    m3_main_other_other = None
    m3_other2_other = None
    m3_other_other_other = None
    if q >= 3:
        m2_other_other = -x / (q * (q - 1)) + 2 * lam * u / ((q - 1) * (q - 2))
        m3_main_other_other = (
            2 * (1 - lam) * u / (q * (q - 1) * (q - 2))
            + 2 * lam * v / ((q - 1) * (q - 2))
            + lam * w / (q - 2)
        )
        # forced by the sum identity over j of E (Y_i1 - 1/q)^2 (Y_j1 - 1/q) = 0
        m3_other2_other = (
            -(q - 2 + 2 * lam) * u / (q * (q - 1) * (q - 2))
            + 2 * lam * v / ((q - 1) * (q - 2))
            + lam * w / (q - 2)
        )
    if q >= 4:
        m3_other_other_other = (
            2 * (q - 3 + 3 * lam) * u / (q * (q - 1) * (q - 2) * (q - 3))
            - 6 * lam * v / ((q - 1) * (q - 2) * (q - 3))
            - 3 * lam * w / ((q - 2) * (q - 3))
        )
    return MomentTable(
        m1_main=lam * x,
        m1_other=-lam * x / (q - 1),
        m2_main=x / q + lam * u,
        m2_other=x / q - lam * u / (q - 1),
        m2_main_other=-x / (q * (q - 1)) - lam * u / (q - 1),
        m2_other_other=m2_other_other,
        m3_main=(1 - lam) * u / q + lam * v,
        m3_other=(q - 1 + lam) * u / (q * (q - 1)) - lam * v / (q - 1),
        m3_main2_other=-(1 - lam) * u / (q * (q - 1)) - lam * v / (q - 1),
        m3_main_other2=-(1 - lam) * u / (q * (q - 1)) - lam * v / (q - 1) - lam * w,
        m3_main_other_other=m3_main_other_other,
        m3_other2_other=m3_other2_other,
        m3_other_other_other=m3_other_other_other,
    )


@dataclass(frozen=True)
class FirstOrderStep:
    """Leading-order one-step predictions for (x, u, v, w)."""

    x: float
    u: float
    v: float
    w: float
    supercritical: bool  # d*lambda^2 > 1: the linearization is expanding

    def __iter__(self):
        return iter((self.x, self.u, self.v, self.w))


def first_order_step(
    x: float, u: float, v: float, w: float, d: float, lam: float, q: int
) -> FirstOrderStep:
    """(x', u', v', w') = (d l^2 x, d l^3 u, d l^4 v + d l^3 (1-l) u / q, d l^4 w)."""
    dl2 = d * lam * lam
    return FirstOrderStep(
        x=dl2 * x,
        u=d * lam**3 * u,
        v=d * lam**4 * v + d * lam**3 * (1 - lam) * u / q,
        w=d * lam**4 * w,
        supercritical=dl2 > 1.0,
    )


def f_q_step(x: float, d: float, lam: float, q: int, dist) -> float:
    """The third-order one-step map evaluated literally.

    dist supplies E[binom(gamma,2)] = m2/2 and E[binom(gamma,3)] = m3/6; it
    may be an OffspringDist, a family name ("poisson"/"regular"), or a
    callable d -> (m2, m3).
    """
    if d <= 1.0:
        raise PoleError(f"f_q has a 1/(d-1) factor; d={d!r} <= 1")
    if d * lam == 1.0:
        raise PoleError("f_q has a 1/(d*lambda - 1) pole")
    m2, m3 = _resolve_moments(dist, d)
    eb2, eb3 = m2 / 2.0, m3 / 6.0
    lin = d * lam**2 * x
    quad = eb2 * lam**4 * (q * (q - 4.0) / (q - 1.0)) * x**2
    cubic1 = eb3 * lam**6 * (q**2 * (q**2 - 18.0 * q + 42.0) / (q - 1.0) ** 2) * x**3
    cubic2 = (
        eb2**2
        * lam**6
        * (
            4.0 * q**2 * (q + 1.0) / ((q - 1.0) ** 2 * d * (d - 1.0))
            - 24.0 * q**2 * (q - 2.0) / ((q - 1.0) ** 2 * d * (d * lam - 1.0))
        )
        * x**3
    )
    return lin + quad + cubic1 + cubic2


def g4_cubic_coeff(d: float, lam: float, dist) -> float:
    """Coefficient of x^3 in the q=4 map: f_4(x) = d l^2 x + g4(d, l) x^3."""
    if d <= 1.0:
        raise PoleError(f"g4 has a 1/(d-1) factor; d={d!r} <= 1")
    if d * lam == 1.0:
        raise PoleError("g4 has a 1/(d*lambda - 1) pole")
    m2, m3 = _resolve_moments(dist, d)
    return (16.0 / 9.0) * lam**6 * (
        m2 * m2 * (5.0 / (d * (d - 1.0)) - 12.0 / (d * (d * lam - 1.0)))
        - (7.0 / 3.0) * m3
    )


_D_STAR_POISSON = ((18.0 + math.sqrt(226.0)) / 7.0) ** 2
_D_STAR_REGULAR = ((18.0 + math.sqrt(275.0)) / 7.0) ** 2


def _d_star_gap(d: float, family: MomentFamily) -> float:
    """Positive below the critical degree, negative above it."""
    m2, m3 = family(d)
    return (15.0 + 36.0 * (math.sqrt(d) - 1.0)) / (7.0 * d * (d - 1.0)) - m3 / (m2 * m2)


def d_star_bisect(family: MomentFamily, tol: float = 1e-9, d_max: float = 1e6) -> float:
    """Smallest d > 1 where the defining inequality turns; inf if none found."""
    lo = 1.0 + 1e-6
    grid = [lo * (d_max / lo) ** (k / 400.0) for k in range(401)]
    prev = grid[0]
    prev_gap = _d_star_gap(prev, family)
    if prev_gap <= 0:
        return prev
    for d in grid[1:]:
        gap = _d_star_gap(d, family)
        if gap <= 0:
            hi, lo_b = d, prev
            while hi - lo_b > tol:
                mid = 0.5 * (hi + lo_b)
                if _d_star_gap(mid, family) <= 0:
                    hi = mid
                else:
                    lo_b = mid
            return 0.5 * (hi + lo_b)
        prev, prev_gap = d, gap
    return math.inf


def d_star(dist: Union[str, OffspringDist, MomentFamily]) -> float:
    """Critical degree for the q=4 antiferromagnetic cubic sign change.

    Closed forms for the Poisson and regular families; bisection (tolerance
    1e-9) for a custom moment family given as a callable d -> (m2, m3).
    """
    if isinstance(dist, str):
        if dist == "poisson":
            return _D_STAR_POISSON
        if dist == "regular":
            return _D_STAR_REGULAR
        raise ParameterError(f"unknown offspring family {dist!r}")
    if isinstance(dist, Poisson):
        return _D_STAR_POISSON
    if isinstance(dist, Regular):
        return _D_STAR_REGULAR
    if isinstance(dist, CustomPmf):
        raise ParameterError(
            "d_star needs a d-parameterized family; pass a callable d -> (m2, m3)"
        )
    if callable(dist):
        return d_star_bisect(dist)
    raise ParameterError(f"cannot interpret {dist!r} as an offspring family")


@dataclass(frozen=True)
class ThresholdReport:
    """KS point and q=4 cubic-coefficient signs for one offspring family."""

    family: str
    d: float | None
    d_star: float
    lambda_ks: float | None
    g4_at_minus: float | None
    g4_at_plus: float | None
    regime_flags: dict

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "d": self.d,
            "d_star": self.d_star,
            "lambda_ks": self.lambda_ks,
            "g4_at_minus": self.g4_at_minus,
            "g4_at_plus": self.g4_at_plus,
            "regime_flags": self.regime_flags,
        }


def threshold_report(family: str, d: float | None = None) -> ThresholdReport:
    """Evaluate d_star, the KS eigenvalue, and g4 at lambda = +-1/sqrt(d)."""
    ds = d_star(family)
    if d is None:
        return ThresholdReport(
            family=family, d=None, d_star=ds, lambda_ks=None,
            g4_at_minus=None, g4_at_plus=None,
            regime_flags={"below_d_star": None, "antiferro_ks_sharp": None,
                          "g4_minus_positive": None, "g4_plus_negative": None},
        )
    if d <= 1.0:
        raise PoleError("threshold report needs d > 1")
    lam_ks = 1.0 / math.sqrt(d)
    g_minus = g4_cubic_coeff(d, -lam_ks, family)
    g_plus = g4_cubic_coeff(d, lam_ks, family)
    return ThresholdReport(
        family=family,
        d=d,
        d_star=ds,
        lambda_ks=lam_ks,
        g4_at_minus=g_minus,
        g4_at_plus=g_plus,
        regime_flags={
            "below_d_star": d < ds,
            "antiferro_ks_sharp": d >= ds,
            "g4_minus_positive": g_minus > 0,
            "g4_plus_negative": g_plus < 0,
        },
    )
