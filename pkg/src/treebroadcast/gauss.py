"""Large-degree Gaussian limit: mu/Sigma, g_q Monte Carlo, the small-s law,
and the normal-approximation (Lindeberg-style) empirical check.

The covariance Sigma (diagonal q, off-diagonal -q/(q-1)) is singular with
rank q-1; sampling goes through an explicit q x (q-1) factor built on the
Helmert basis of the sum-zero subspace.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .channel import ParameterError


@dataclass(frozen=True)
class GaussLimit:
    q: int
    mu: np.ndarray
    sigma: np.ndarray


def gauss_limit(q: int) -> GaussLimit:
    """mu_1 = q/2, mu_i = -q/2 - q/(q-1); Sigma_ii = q, Sigma_ij = -q/(q-1)."""
    if q < 2:
        raise ParameterError("q must be >= 2")
    mu = np.full(q, -q / 2.0 - q / (q - 1.0))
    mu[0] = q / 2.0
    sigma = np.full((q, q), -q / (q - 1.0))
    np.fill_diagonal(sigma, float(q))
    return GaussLimit(q=q, mu=mu, sigma=sigma)


def sigma_factor(q: int) -> np.ndarray:
    """A with A A^T = Sigma; A = q/sqrt(q-1) * (Helmert basis of 1-perp)."""
    H = np.zeros((q, q - 1))
    for k in range(1, q):
        H[:k, k - 1] = 1.0 / math.sqrt(k * (k + 1))
        H[k, k - 1] = -k / math.sqrt(k * (k + 1))
    return (q / math.sqrt(q - 1.0)) * H


def sample_limit_gaussian(q: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw size vectors W ~ N(0, Sigma) through the rank-(q-1) factor."""
    return rng.standard_normal((size, q - 1)) @ sigma_factor(q).T


def _psi(v: np.ndarray) -> np.ndarray:
    """psi(w) = e^{w_1} / sum_i e^{w_i}, numerically stabilized."""
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e[..., 0] / e.sum(axis=-1)


def _check_s(q: int, s: float) -> None:
    if not 0.0 <= s <= (q - 1.0) / q:
        raise ParameterError(f"s={s!r} outside [0, (q-1)/q]")


@dataclass(frozen=True)
class GqEstimate:
    q: int
    s: float
    estimate: float
    se: float
    samples: int


def gq_mc(q: int, s: float, samples: int, rng: np.random.Generator, batch: int = 200_000) -> GqEstimate:
    """Plain Monte Carlo for g_q(s) = E psi(s mu + sqrt(s) W) - 1/q."""
    _check_s(q, s)
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    lim = gauss_limit(q)
    A = sigma_factor(q)
    tot = totsq = 0.0
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        W = rng.standard_normal((b, q - 1)) @ A.T
        vals = _psi(s * lim.mu + math.sqrt(s) * W) - 1.0 / q
        tot += vals.sum()
        totsq += (vals * vals).sum()
        done += b
    mean = tot / samples
    var = max(totsq / samples - mean * mean, 0.0)
    return GqEstimate(q=q, s=s, estimate=mean, se=math.sqrt(var / samples), samples=samples)


def gq_exp_series(q: int, s: float, order: int) -> float:
    """Exact expectation of the truncated geometric expansion of psi.

    With x = (sum_i e^{v_i} - q)/q and v = s mu + sqrt(s) W,
        psi(v) = sum_{l<order} (-1)^l x^l e^{v_1} / q  +  (-x)^order psi(v),
    and every term E[x^l e^{v_1}] reduces to Gaussian moment-generating
    values exp(s t.mu + s t.Sigma t / 2) over integer count vectors t.
    """
    _check_s(q, s)
    lim = gauss_limit(q)
    mu, sig = lim.mu, lim.sigma
    contributions = []
    for ell in range(order):
        sign_l = (-1.0) ** ell
        for j in range(ell + 1):
            cbin = math.comb(ell, j) * (-q) ** (ell - j)
            for combo in itertools.combinations_with_replacement(range(q), j):
                t = np.zeros(q)
                t[0] += 1.0
                for c in combo:
                    t[c] += 1.0
                mult = math.factorial(j)
                for state in range(q):
                    mult //= math.factorial(combo.count(state))
                expo = s * float(t @ mu) + 0.5 * s * float(t @ sig @ t)
                contributions.append(
                    sign_l * cbin * mult * math.exp(expo) / q ** (ell + 1)
                )
    contributions.append(-1.0 / q)
    return math.fsum(contributions)


@dataclass(frozen=True)
class GqDeficit:
    """Estimate of s - g_q(s) by exact-series control with an MC residual.

    The geometric expansion of psi is summed in closed form; only the small
    remainder (-x)^order psi is Monte-Carlo averaged, over the same W draws
    that define psi (common random numbers), so the difference s - g carries
    the residual's tiny variance instead of psi's.
    """

    q: int
    s: float
    deficit: float
    deficit_se: float
    g_estimate: float
    series_part: float
    residual: float
    samples: int
    order: int

    @property
    def cubic_ratio(self) -> float:
        """(s - g_q(s)) / s^3, the small-s law's limiting 112/27 for q=4."""
        return self.deficit / self.s**3


def gq_deficit_mc(
    q: int,
    s: float,
    samples: int,
    rng: np.random.Generator,
    order: int = 6,
    batch: int = 200_000,
) -> GqDeficit:
    _check_s(q, s)
    if s <= 0:
        raise ParameterError("the deficit ratio needs s > 0")
    series = gq_exp_series(q, s, order)
    lim = gauss_limit(q)
    A = sigma_factor(q)
    tot = totsq = 0.0
    done = 0
    sgn = (-1.0) ** order
    while done < samples:
        b = min(batch, samples - done)
        W = rng.standard_normal((b, q - 1)) @ A.T
        v = s * lim.mu + math.sqrt(s) * W
        ev = np.exp(v)
        x = (ev.sum(axis=1) - q) / q
        psi = ev[:, 0] / ev.sum(axis=1)
        r = sgn * x**order * psi
        tot += r.sum()
        totsq += (r * r).sum()
        done += b
    res = tot / samples
    var = max(totsq / samples - res * res, 0.0)
    se = math.sqrt(var / samples)
    g = series + res
    return GqDeficit(
        q=q, s=s, deficit=s - g, deficit_se=se, g_estimate=g,
        series_part=series, residual=res, samples=samples, order=order,
    )


# ---------------------------------------------------------------------------
# Normal-approximation empirical check (Lindeberg-style decay)

_TEST_FNS = {
    "gauss_bump": lambda x: np.exp(-0.5 * (x * x).sum(axis=-1)),
    "cos_sum": lambda x: np.cos(x.sum(axis=-1) / np.sqrt(x.shape[-1])),
    "sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x[..., 0])),
    # odd in the first coordinate: picks up the 1/sqrt(D) skew term directly
    "sin_first": lambda x: np.sin(x[..., 0]),
}

_VJ_KINDS = ("rademacher", "skewed", "gaussian")


@dataclass(frozen=True)
class NormalApproxReport:
    D: int
    test_fn: str
    vj_kind: str
    discrepancy: float
    se: float
    samples: int
    lindeberg_scale: float  # C^3 / sqrt(D) with the ensemble's bound C


def normal_approx_error(
    D: int,
    test_fn_id: str,
    rng: np.random.Generator,
    q: int = 4,
    vj_kind: str = "skewed",
    samples: int = 200_000,
    batch: int = 50_000,
) -> NormalApproxReport:
    """|E phi(sum_j V_j) - E phi(W)| for matched-moment W, by Monte Carlo.

    V_j coordinates are i.i.d. with mean 0 and variance 1/D, bounded by
    C/sqrt(D); the sum has identity covariance, so W ~ N(0, I_q).
    """
    if test_fn_id not in _TEST_FNS:
        raise ParameterError(f"unknown test function {test_fn_id!r}; have {sorted(_TEST_FNS)}")
    if vj_kind not in _VJ_KINDS:
        raise ParameterError(f"unknown V_j ensemble {vj_kind!r}; have {_VJ_KINDS}")
    phi = _TEST_FNS[test_fn_id]
    scale = 1.0 / math.sqrt(D)
    if vj_kind == "skewed":
        # standardized Bernoulli(p): bounded, nonzero third moment
        p = 0.1
        hi_v = (1.0 - p) / math.sqrt(p * (1.0 - p))
        lo_v = -p / math.sqrt(p * (1.0 - p))
        bound_c = max(abs(hi_v), abs(lo_v))
    elif vj_kind == "rademacher":
        bound_c = 1.0
    else:
        bound_c = 3.0  # nominal: Gaussians are unbounded; scale only reported

    sums = []
    sumsq = []
    for side in ("sum", "gauss"):
        tot = totsq = 0.0
        done = 0
        while done < samples:
            b = min(batch, samples - done)
            if side == "gauss":
                S = rng.standard_normal((b, q))
            elif vj_kind == "gaussian":
                S = rng.standard_normal((b, q))
            elif vj_kind == "rademacher":
                # sum of D independent +-scale coordinates == scaled binomial
                counts = rng.binomial(D, 0.5, size=(b, q))
                S = (2.0 * counts - D) * scale
            else:  # skewed
                counts = rng.binomial(D, 0.1, size=(b, q))
                S = (counts - D * 0.1) / math.sqrt(0.1 * 0.9) * scale
            vals = phi(S)
            tot += vals.sum()
            totsq += (vals * vals).sum()
            done += b
        sums.append(tot / samples)
        sumsq.append(max(totsq / samples - (tot / samples) ** 2, 0.0))
    disc = abs(sums[0] - sums[1])
    se = math.sqrt((sumsq[0] + sumsq[1]) / samples)
    return NormalApproxReport(
        D=D, test_fn=test_fn_id, vj_kind=vj_kind, discrepancy=disc,
        se=se, samples=samples, lindeberg_scale=bound_c**3 / math.sqrt(D),
    )


# ---------------------------------------------------------------------------
# The small-s upper-bound polynomial h

H_COEFFS = (
    Fraction(-112, 27),
    Fraction(64, 3),
    Fraction(-91648, 1215),
    Fraction(173440, 81),
    Fraction(18592600576, 229635),
    Fraction(10146392576, 10935),
    Fraction(19133607950336, 2657205),
    Fraction(6110816204800, 137781),
    Fraction(2137414093270245376, 9207215325),
    Fraction(298924336312352768, 279006525),
    Fraction(2385675002892473434880, 18467043309),
)

H_DOMAIN_MAX = 0.0612


def h_poly(s: float) -> float:
    """Float Horner evaluation of the degree-10 small-s bound polynomial."""
    if not 0.0 <= s <= H_DOMAIN_MAX:
        raise ParameterError(f"h is stated for 0 <= s <= {H_DOMAIN_MAX}, got {s!r}")
    acc = 0.0
    for c in reversed(H_COEFFS):
        acc = acc * s + float(c)
    return acc


def h_poly_exact(s) -> Fraction:
    """Rational Horner evaluation; s may be a float (taken exactly) or Fraction."""
    sf = Fraction(s)
    if not 0 <= sf <= Fraction(612, 10000):
        raise ParameterError(f"h is stated for 0 <= s <= {H_DOMAIN_MAX}, got {s!r}")
    acc = Fraction(0)
    for c in reversed(H_COEFFS):
        acc = acc * sf + c
    return acc


@dataclass(frozen=True)
class HCheckReport:
    increasing: bool
    endpoint_value: float
    endpoint_below_minus_002: bool
    derivative_min_on_grid: float
    quadratic_identity_exact: bool

    @property
    def passed(self) -> bool:
        return self.increasing and self.endpoint_below_minus_002 and self.quadratic_identity_exact


def h_check(grid_points: int = 2000) -> HCheckReport:
    """Certify h increasing on (0, 0.0612] and h(0.0612) < -0.02.

    Monotonicity: every coefficient of s^l, l >= 3, is positive, so for s > 0
    h'(s) >= c1 + 2 c2 s + 3 c3 s^2; completing the square in exact rationals,
    that quadratic is (173440/27)(s - 716/60975)^2 plus a positive constant,
    hence strictly positive.  A fine float grid of h' is a cross-check.
    """
    c1, c2, c3 = H_COEFFS[1], H_COEFFS[2], H_COEFFS[3]
    lead = 3 * c3
    center = -c2 / lead  # = 716/60975
    const = c1 - lead * center * center
    identity = (
        lead == Fraction(173440, 27)
        and center == Fraction(716, 60975)
        and const > 0
        and all(c > 0 for c in H_COEFFS[3:])
    )

    smax = H_DOMAIN_MAX
    dmin = math.inf
    for k in range(1, grid_points + 1):
        s = smax * k / grid_points
        dval = 0.0
        for p in range(len(H_COEFFS) - 1, 0, -1):
            dval = dval * s + p * float(H_COEFFS[p])
        dmin = min(dmin, dval)
    endpoint = h_poly_exact(Fraction(612, 10000))
    return HCheckReport(
        increasing=identity and dmin > 0,
        endpoint_value=float(endpoint),
        endpoint_below_minus_002=endpoint < Fraction(-2, 100),
        derivative_min_on_grid=dmin,
        quadratic_identity_exact=identity,
    )
