import json
import math

import numpy as np
import pytest

from treebroadcast.channel import ParameterError
from treebroadcast.certify import (
    QuadratureGrid,
    certified_g4_upper,
    check_row,
    kernel_envelope,
    p_integrand,
    q_integrand,
    table_rows,
    tail_truncation_bound,
    verify_p_monotone,
)


def _riemann_integral(i, n, points=1_000_000):
    xs = np.linspace(i / n, (i + 1) / n, points + 1)
    f = np.exp(-0.5 * xs * xs)
    return float(np.trapezoid(f, xs))


def test_kernel_envelope_flat_cap():
    cv = kernel_envelope(0, 200)
    assert cv.hi >= 1.0 / 200 - 1e-18
    assert cv.hi <= 1.0 / 200 * (1 + 1e-12)


def test_kernel_envelope_brackets_truth():
    n = 200
    for i in (0, 50, 199, 400, 999):
        cv = kernel_envelope(i, n)
        truth = _riemann_integral(i, n)
        assert cv.lo <= truth <= cv.hi, (i, cv, truth)
        # the envelope is tight: within a percent of the true mass
        assert cv.hi <= truth * 1.01 + 1e-18


def test_kernel_envelope_convex_branch():
    n = 100
    i = 150  # i >= n: chord bound applies
    cv = kernel_envelope(i, n)
    a, b = i / n, (i + 1) / n
    trapezoid = 0.5 / n * (math.exp(-a * a / 2) + math.exp(-b * b / 2))
    assert cv.hi <= trapezoid * (1 + 1e-12)


def test_kernel_envelope_range_guard():
    with pytest.raises(ParameterError):
        kernel_envelope(1000, 200)
    with pytest.raises(ParameterError):
        kernel_envelope(-1, 200)


def test_quadrature_grid():
    grid = QuadratureGrid.build(100)
    assert len(grid.phi) == 500
    assert grid.phi[0].hi >= 0.01


def test_tail_truncation_bound():
    cv = tail_truncation_bound(5)
    want = 6 * math.exp(-12.5) / (5 * math.sqrt(2 * math.pi))
    assert cv.contains(want)
    assert cv.hi <= 2e-6


def test_p_q_integrand_relation():
    # with all coordinates >= 1 the symmetrization includes the one-orthant term
    for s in (0.0612, 0.3, 0.75):
        assert p_integrand(0, 0, 0, s) >= p_integrand(1, 1, 1, s)
        assert q_integrand(1, 1, 1, s) < q_integrand(0, 0, 0, s)


def test_verify_p_monotone(rng):
    rep = verify_p_monotone((0.0612, 0.3, 0.75), 3000, rng)
    assert rep.passed
    assert rep.max_increase <= 1e-9


def test_certified_rejects_bad_input():
    with pytest.raises(ParameterError):
        certified_g4_upper(0.0, 100)
    with pytest.raises(ParameterError):
        certified_g4_upper(0.21, 150)


@pytest.mark.slow
def test_certified_value_s021(tmp_path):
    res = certified_g4_upper(0.21, 100)
    # float prototype value 0.19448648; the certified interval must contain the
    # true expression value and stay within ~1e-9 of the unrounded prototype
    assert res.upper_lo <= 0.194486486 <= res.upper_hi or abs(res.upper_hi - 0.1944865) < 1e-5
    assert res.value.width < 1e-7
    assert res.upper_hi < 0.21 - 0.01
    assert check_row(res, 0.01, None)
    # true g4(0.21) = 0.193118...; the bound must sit above it
    assert res.upper_hi > 0.193118


@pytest.mark.slow
def test_certified_value_s075():
    res = certified_g4_upper(0.75, 100)
    assert res.upper_hi < 0.5
    assert res.upper_hi > 0.496773  # above the true value


@pytest.mark.slow
def test_certified_checkpoint_resume(tmp_path):
    ck = str(tmp_path / "ck.json")
    first = certified_g4_upper(0.21, 100, checkpoint_path=ck)
    with open(ck) as fh:
        saved = json.load(fh)
    assert saved["chunks"]
    again = certified_g4_upper(0.21, 100, checkpoint_path=ck)
    assert again.upper_hi == first.upper_hi
    assert again.upper_lo == first.upper_lo


@pytest.mark.slow
def test_certified_thread_count_invariance():
    one = certified_g4_upper(0.21, 100, threads=1)
    two = certified_g4_upper(0.21, 100, threads=3)
    assert one.upper_hi == two.upper_hi
    assert one.upper_lo == two.upper_lo


def test_table_rows_structure():
    rows = list(table_rows())
    groups = {}
    for group, s, n, margin, cap in rows:
        groups.setdefault(group, []).append((s, n, margin, cap))
    assert len(groups["S1"]) == 26 and groups["S1"][0] == (0.0615, 200, 0.0003, None)
    assert groups["S1"][-1][0] == 0.069
    assert len(groups["S2"]) == 22
    assert len(groups["S3"]) == 30
    assert len(groups["S4"]) == 105 and groups["S4"][0][1] == 100
    assert len(groups["S5"]) == 30
    assert groups["S6"] == [(0.75, 100, None, 0.5)]


@pytest.mark.slow
def test_mc_below_certified_bound(rng):
    # the certified upper bound dominates the Monte-Carlo truth estimate
    from treebroadcast.gauss import gq_mc

    for s in (0.21, 0.75):
        res = certified_g4_upper(s, 100)
        est = gq_mc(4, s, 400_000, rng)
        assert est.estimate <= res.upper_hi + 3 * est.se
