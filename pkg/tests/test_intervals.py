import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mpmath as mp

from treebroadcast.intervals import PI, CertifiedValue, cv_sum


def test_basic_containment():
    third = CertifiedValue.exact(1.0) / 3.0
    assert third.lo < 1.0 / 3.0 < third.hi or third.contains(1.0 / 3.0)
    one = third * 3.0
    assert one.contains(1.0)


def test_exp_containment():
    x = CertifiedValue.exact(1.0).exp()
    assert x.contains(math.e)
    y = CertifiedValue.exact(-12.5).exp()
    assert y.lo <= math.exp(-12.5) <= y.hi
    assert y.lo > 0


def test_sqrt_containment():
    r = CertifiedValue.exact(2.0).sqrt()
    sq = r * r
    assert sq.contains(2.0)


def test_pi_interval():
    assert PI.contains(math.pi)
    assert PI.width < 1e-15


def test_ordering_invariant():
    with pytest.raises(ValueError):
        CertifiedValue(1.0, 0.0)


def test_reciprocal_through_zero():
    with pytest.raises(ZeroDivisionError):
        CertifiedValue(-1.0, 1.0).reciprocal()


def test_sub_and_neg():
    a = CertifiedValue.exact(0.3) - CertifiedValue.exact(0.1)
    assert a.contains(0.3 - 0.1)
    assert (-a).hi == -a.lo or (-a).contains(-(0.3 - 0.1))


def test_min_max():
    a = CertifiedValue(1.0, 2.0)
    b = CertifiedValue(1.5, 1.6)
    assert a.min(b).hi == 1.6
    assert a.max(b).lo == 1.5


mp.mp.dps = 60

_expr_ops = st.lists(
    st.tuples(st.sampled_from(["add", "mul", "exp", "recip", "sqrt"]),
              st.floats(-3.0, 3.0, allow_nan=False)),
    min_size=1, max_size=8,
)


@given(start=st.floats(0.1, 4.0, allow_nan=False), ops=_expr_ops)
@settings(max_examples=100, deadline=None)
def test_random_expressions_against_mpmath(start, ops):
    """Composed operations keep the extended-precision value inside and stay
    within a few ulps per operation of width."""
    cv = CertifiedValue.exact(start)
    truth = mp.mpf(start)
    # relative-error calculus: each op may add 4 ulp-scale units of width;
    # exp converts relative width through the condition number |x|, addition
    # through the cancellation ratio |old|/|new|
    budget = 0.0
    per_op = 4 * 2.0**-50
    for op, arg in ops:
        if op == "add":
            new_truth = truth + mp.mpf(arg)
            if abs(new_truth) < 1e-6:
                continue
            budget = budget * float(abs(truth) / abs(new_truth)) + per_op
            cv = cv + arg
            truth = new_truth
        elif op == "mul":
            if arg == 0.0 or not 1e-6 < abs(truth * mp.mpf(arg)) < 1e6:
                continue
            cv = cv * arg
            truth = truth * mp.mpf(arg)
            budget += per_op
        elif op == "exp":
            if abs(truth) > 6:
                continue
            budget = budget * max(float(abs(truth)), 1.0) + per_op
            cv = cv.exp()
            truth = mp.e ** truth
        elif op == "recip":
            if cv.lo <= 0 <= cv.hi:
                continue
            cv = cv.reciprocal()
            truth = 1 / truth
            budget += per_op
        else:
            if cv.lo < 0:
                continue
            cv = cv.sqrt()
            truth = mp.sqrt(truth)
            budget += per_op
        assert mp.mpf(cv.lo) <= truth <= mp.mpf(cv.hi)
    assert cv.width <= float(abs(truth)) * budget * 1.5 + 1e-300


def test_cv_sum_fixed_order():
    vals = [CertifiedValue.exact(0.1)] * 10
    s = cv_sum(vals)
    assert s.contains(10 * 0.1) or (s.lo <= 1.0 <= s.hi)
    assert s.width < 1e-14
