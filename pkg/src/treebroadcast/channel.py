"""Symmetric q-state channel, (d, lambda) <-> (a, b) maps, Kesten-Stigum arithmetic.

The channel matrix is K_lambda = lambda*I + (1-lambda)*J, where J is the
all-1/q matrix.  States are 1-indexed throughout, matching {1, ..., q}.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

# absolute slack for admissible-range comparisons; tolerates round-tripping
RANGE_SLACK = 1e-12


class ParameterError(ValueError):
    """Channel or graph parameters outside their admissible range."""


def _check_lambda(q: int, lam: float) -> float:
    lo = -1.0 / (q - 1)
    if lam < lo - RANGE_SLACK or lam >= 1.0:
        raise ParameterError(
            f"lambda={lam!r} outside [-1/(q-1), 1) = [{lo!r}, 1) for q={q}"
        )
    return max(lam, lo)


def _check_q(q: int) -> int:
    if not isinstance(q, (int, np.integer)) or q < 2:
        raise ParameterError(f"q must be an integer >= 2, got {q!r}")
    return int(q)


@dataclass(frozen=True)
class ModelParams:
    """Channel parameters (q, lambda) and graph parameters (d, a, b).

    Both parameterizations are always populated; they satisfy
    d = (a + (q-1)b)/q and lambda = (a-b)/(a+(q-1)b) simultaneously.
    """

    q: int
    lam: float
    d: float
    a: float
    b: float

    @classmethod
    def from_dlambda(cls, q: int, d: float, lam: float) -> "ModelParams":
        q = _check_q(q)
        lam = _check_lambda(q, lam)
        if d <= 0:
            raise ParameterError(f"d must be positive, got {d!r}")
        a, b = ab_from_dlambda(q, d, lam)
        return cls(q=q, lam=lam, d=float(d), a=a, b=b)

    @classmethod
    def from_ab(cls, q: int, a: float, b: float) -> "ModelParams":
        q = _check_q(q)
        if a < 0 or b < 0:
            raise ParameterError(f"edge rates must be nonnegative, got a={a!r} b={b!r}")
        d, lam = dlambda_from_ab(q, a, b)
        return cls(q=q, lam=lam, d=d, a=float(a), b=float(b))

    @property
    def ks_product(self) -> float:
        """d * lambda^2; equals 1 exactly at the Kesten-Stigum point."""
        return self.d * self.lam * self.lam

    @property
    def strong_signal(self) -> bool:
        """Whether d^2 |lambda|^3 > 1 (the cubic-signal condition, sans constant)."""
        return self.d * self.d * abs(self.lam) ** 3 > 1.0

    def to_json(self) -> str:
        return json.dumps(
            {"q": self.q, "lambda": self.lam, "d": self.d, "a": self.a, "b": self.b}
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        obj = json.loads(text)
        params = cls.from_dlambda(obj["q"], obj["d"], obj["lambda"])
        if abs(params.a - obj["a"]) > 1e-9 * (1 + abs(obj["a"])) or abs(
            params.b - obj["b"]
        ) > 1e-9 * (1 + abs(obj["b"])):
            raise ParameterError("inconsistent (d, lambda) vs (a, b) in JSON")
        return params


def ab_from_dlambda(q: int, d: float, lam: float) -> tuple[float, float]:
    """Invert d = (a+(q-1)b)/q, lambda = (a-b)/(a+(q-1)b)."""
    q = _check_q(q)
    lam = _check_lambda(q, lam)
    a = d * (1.0 + (q - 1) * lam)
    b = d * (1.0 - lam)
    if a < -RANGE_SLACK or b < 0:
        raise ParameterError(f"resulting rates negative: a={a!r} b={b!r}")
    return max(a, 0.0), b


def dlambda_from_ab(q: int, a: float, b: float) -> tuple[float, float]:
    q = _check_q(q)
    if a < 0 or b < 0:
        raise ParameterError(f"edge rates must be nonnegative, got a={a!r} b={b!r}")
    denom = a + (q - 1) * b
    if denom <= 0:
        raise ParameterError("a + (q-1) b must be positive")
    d = denom / q
    lam = (a - b) / denom
    return d, _check_lambda(q, lam)


def transition_prob(params: ModelParams, i: int, j: int) -> float:
    """P(child = j | parent = i) for the symmetric channel."""
    q, lam = params.q, params.lam
    if not (1 <= i <= q and 1 <= j <= q):
        raise ParameterError(f"states must lie in 1..{q}, got ({i}, {j})")
    off = (1.0 - lam) / q
    return lam + off if i == j else off


def channel_matrix(params: ModelParams) -> np.ndarray:
    """The q x q matrix lambda*I + (1-lambda)*J, rows summing to 1."""
    q, lam = params.q, params.lam
    mat = np.full((q, q), (1.0 - lam) / q)
    mat[np.diag_indices(q)] += lam
    return mat


def ks_lambda(d: float) -> float:
    """The positive eigenvalue on the Kesten-Stigum boundary: 1/sqrt(d)."""
    if d <= 0:
        raise ParameterError(f"d must be positive, got {d!r}")
    return 1.0 / math.sqrt(d)


def compose_lambda(lam: float, c: float) -> float:
    """Eigenvalue of the composed channel K_c K_lambda = K_{c*lambda}.

    c must lie in [0, 1] (a copy-with-probability-c randomization).
    """
    if not 0.0 <= c <= 1.0:
        raise ParameterError(f"composition factor must lie in [0, 1], got {c!r}")
    return c * lam
