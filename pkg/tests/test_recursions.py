import itertools
import math

import numpy as np
import pytest

from treebroadcast.channel import ModelParams, ParameterError, channel_matrix
from treebroadcast.gwtree import CustomPmf, Poisson, Regular
from treebroadcast.posterior import star_exact
from treebroadcast.recursions import (
    PoleError,
    d_star,
    d_star_bisect,
    f_q_step,
    first_order_step,
    g4_cubic_coeff,
    poisson_family,
    regular_family,
    threshold_report,
    y_moment_table,
)

D_STAR_POISSON = ((18.0 + math.sqrt(226.0)) / 7.0) ** 2  # 22.2694...
D_STAR_REGULAR = ((18.0 + math.sqrt(275.0)) / 7.0) ** 2  # 24.4080...


def _enumerate_y_moments(params, gamma, kvec):
    """Exact E prod_i (Y_i1 - 1/q)^{k_i} for n=1 with a Regular(gamma) subtree.

    The first child's subtree is a gamma-leaf star; its message depends only
    on the per-state leaf counts, and the child's spin follows the channel
    row of the root's (conditioned) spin 1.
    """
    q, lam = params.q, params.lam
    mat = channel_matrix(params)
    hi = 1.0 + lam * (q - 1)
    lo = 1.0 - lam
    total = 0.0
    for s in range(q):
        p_spin = mat[0, s]
        for counts in itertools.product(range(gamma + 1), repeat=q):
            if sum(counts) != gamma:
                continue
            mult = math.factorial(gamma)
            for c in counts:
                mult //= math.factorial(c)
            p_counts = mult * math.prod(mat[s, i] ** counts[i] for i in range(q))
            z = np.array([hi ** counts[i] * lo ** (gamma - counts[i]) for i in range(q)])
            y = z / z.sum()
            term = math.prod((y[i] - 1.0 / q) ** kvec[i] for i in range(q) if kvec[i])
            total += p_spin * p_counts * term
    return total


ENTRY_KVECS = {
    "m1_main": (1, 0, 0, 0),
    "m1_other": (0, 1, 0, 0),
    "m2_main": (2, 0, 0, 0),
    "m2_other": (0, 2, 0, 0),
    "m2_main_other": (1, 1, 0, 0),
    "m2_other_other": (0, 1, 1, 0),
    "m3_main": (3, 0, 0, 0),
    "m3_other": (0, 3, 0, 0),
    "m3_main2_other": (2, 1, 0, 0),
    "m3_main_other2": (1, 2, 0, 0),
    "m3_main_other_other": (1, 1, 1, 0),
    "m3_other2_other": (0, 2, 1, 0),
    "m3_other_other_other": (0, 1, 1, 1),
}


@pytest.mark.parametrize("q,lam", [(4, 0.5), (4, -0.3), (3, 0.5)])
def test_y_moment_table_against_enumeration(q, lam):
    gamma = 3
    params = ModelParams.from_dlambda(q, float(gamma), lam)
    ex = star_exact(params, gamma)
    table = y_moment_table(ex.x, ex.u, ex.v, ex.w, lam, q)
    for name, kvec in ENTRY_KVECS.items():
        if q == 3 and kvec[3]:
            continue  # needs four states
        want = _enumerate_y_moments(params, gamma, kvec[:q])
        got = getattr(table, name)
        if got is None:
            continue
        assert got == pytest.approx(want, abs=1e-12), name


def test_y_moment_simple_values():
    table = y_moment_table(0.1, 0.0, 0.0, 0.0, 0.5, 4)
    assert table.m1_main == pytest.approx(0.05, abs=1e-15)


def test_y_moment_symmetric_sums():
    rng = np.random.default_rng(7)
    for _ in range(20):
        x, u, v, w = rng.random(4) * 0.2
        lam = rng.uniform(-0.3, 0.9)
        q = int(rng.integers(3, 8))
        t = y_moment_table(x, u, v, w, lam, q)
        assert abs(t.m1_main + (q - 1) * t.m1_other) < 1e-15
        assert abs(t.m2_main + (q - 1) * t.m2_main_other) < 1e-15
        assert abs(t.m2_main_other + t.m2_other + (q - 2) * t.m2_other_other) < 1e-14
        # third-moment row sums: sum_j E (Y_11c)^2 (Y_j1c) = 0 etc.
        assert abs(t.m3_main + (q - 1) * t.m3_main2_other) < 1e-14
        assert abs(t.m3_main2_other + t.m3_main_other2 + (q - 2) * t.m3_main_other_other) < 1e-14
        if q >= 4:
            assert abs(t.m3_main_other2 + t.m3_other + (q - 2) * t.m3_other2_other) < 1e-14


def test_y_moment_small_q_guard():
    t = y_moment_table(0.1, 0.01, 0.0, 0.0, 0.5, 2)
    assert t.m2_other_other is None
    with pytest.raises(ParameterError):
        t.entry("m2_other_other")
    t3 = y_moment_table(0.1, 0.01, 0.0, 0.0, 0.5, 3)
    assert t3.m3_other_other_other is None


def test_first_order_step_values():
    step = first_order_step(0.0, 0.0, 0.0, 0.0, 5.0, 0.3, 4)
    assert tuple(step) == (0.0, 0.0, 0.0, 0.0)
    d = 9.0
    lam = 1.0 / math.sqrt(d)
    step = first_order_step(1e-4, 0.0, 0.0, 0.0, d, lam, 4)
    assert step.x == pytest.approx(1e-4, rel=1e-12)
    assert not step.supercritical
    x, u, v, w, d, lam, q = 0.02, 0.003, 1e-4, -2e-4, 6.0, -0.3, 5
    step = first_order_step(x, u, v, w, d, lam, q)
    assert step.x == pytest.approx(d * lam**2 * x, rel=1e-14)
    assert step.u == pytest.approx(d * lam**3 * u, rel=1e-14)
    assert step.v == pytest.approx(d * lam**4 * v + d * lam**3 * (1 - lam) * u / q, rel=1e-14)
    assert step.w == pytest.approx(d * lam**4 * w, rel=1e-14)


def test_f_q_quadratic_coefficient():
    # q=4 kills the x^2 term; q=3 has coefficient q(q-4)/(q-1) = -3/2
    assert 4 * (4 - 4) / (4 - 1) == 0
    assert 3 * (3 - 4) / (3 - 1) == -1.5
    x, d, lam = 1e-3, 30.0, 0.1
    base = f_q_step(x, d, lam, 4, "poisson")
    # remove linear+cubic analytically: the residual quadratic term must vanish
    cubic = g4_cubic_coeff(d, lam, "poisson")
    assert base - (d * lam**2 * x + cubic * x**3) == pytest.approx(0.0, abs=1e-18)


def test_f4_equals_linear_plus_g4_cubic():
    rng = np.random.default_rng(3)
    for _ in range(50):
        d = rng.uniform(2.0, 80.0)
        lam = rng.uniform(-1.0 / math.sqrt(d), 1.0 / math.sqrt(d))
        if abs(d * lam - 1.0) < 1e-3:
            continue
        x = rng.uniform(1e-5, 0.05)
        for fam in ("poisson", "regular"):
            want = d * lam**2 * x + g4_cubic_coeff(d, lam, fam) * x**3
            assert f_q_step(x, d, lam, 4, fam) == pytest.approx(want, rel=1e-12, abs=1e-18)


def test_f4_crosscheck_at_ks():
    d = 30.0
    for lam in (1.0 / math.sqrt(d), -1.0 / math.sqrt(d)):
        x = 0.01
        want = d * lam**2 * x + g4_cubic_coeff(d, lam, Poisson(d)) * x**3
        assert f_q_step(x, d, lam, 4, Poisson(d)) == pytest.approx(want, rel=1e-12)


def test_f_q_poles():
    with pytest.raises(PoleError):
        f_q_step(0.01, 1.0, 0.5, 4, "poisson")
    with pytest.raises(PoleError):
        f_q_step(0.01, 4.0, 0.25, 4, "poisson")
    with pytest.raises(PoleError):
        g4_cubic_coeff(4.0, 0.25, "poisson")


def test_f_q_first_order_agreement():
    # |f_q(x) - d l^2 x| / x^2 stays bounded as x -> 0
    d, lam, q = 30.0, -1.0 / math.sqrt(30.0), 3
    bound = 0.0
    for x in np.geomspace(1e-6, 1e-3, 10):
        ratio = abs(f_q_step(x, d, lam, q, "poisson") - d * lam**2 * x) / x**2
        bound = max(bound, ratio)
    coeff = abs((d * d / 2) * lam**4 * q * (q - 4) / (q - 1))
    assert bound < coeff * 1.5 + 1.0


def test_g4_sign_structure_poisson():
    for d in (5.0, 10.0, 20.0):
        assert g4_cubic_coeff(d, -1.0 / math.sqrt(d), "poisson") > 0
    for d in (25.0, 50.0, 100.0):
        assert g4_cubic_coeff(d, -1.0 / math.sqrt(d), "poisson") < 0
    for d in (2.0, 5.0, 10.0, 25.0, 50.0, 100.0):
        assert g4_cubic_coeff(d, 1.0 / math.sqrt(d), "poisson") < 0


def test_g4_sign_flip_regular():
    assert g4_cubic_coeff(24.40, -1.0 / math.sqrt(24.40), "regular") > 0
    assert g4_cubic_coeff(24.42, -1.0 / math.sqrt(24.42), "regular") < 0


def test_d_star_closed_forms():
    assert abs(d_star("poisson") - D_STAR_POISSON) < 1e-12
    assert abs(d_star("regular") - D_STAR_REGULAR) < 1e-12
    assert abs(d_star(Poisson(5.0)) - D_STAR_POISSON) < 1e-12
    assert abs(d_star(Regular(5)) - D_STAR_REGULAR) < 1e-12


def test_d_star_bisection_crosscheck():
    assert abs(d_star_bisect(poisson_family) - D_STAR_POISSON) < 1e-6
    assert abs(d_star_bisect(regular_family) - D_STAR_REGULAR) < 1e-6


def test_d_star_sign_flip_at_critical():
    ds = d_star("poisson")
    assert g4_cubic_coeff(ds - 1e-4, -1.0 / math.sqrt(ds - 1e-4), "poisson") > 0
    assert g4_cubic_coeff(ds + 1e-4, -1.0 / math.sqrt(ds + 1e-4), "poisson") < 0


def test_d_star_custom_requires_family():
    with pytest.raises(ParameterError):
        d_star(CustomPmf([0.5, 0.5]))
    # a family whose inequality never turns -> infinity marker
    assert d_star(lambda d: (d * d, 0.0)) == math.inf


def test_g4_single_sign_change_on_range():
    ds = d_star("poisson")
    signs = []
    prev = None
    for d in np.linspace(1.5, 100.0, 2000):
        s = g4_cubic_coeff(d, -1.0 / math.sqrt(d), "poisson") > 0
        if prev is None or s != prev:
            signs.append((d, s))
            prev = s
    assert len(signs) == 2  # positive then negative, one flip
    assert abs(signs[1][0] - ds) < 0.1


def test_q_ge_5_quadratic_positive():
    for q in range(5, 12):
        assert q * (q - 4) / (q - 1) > 0
        for d in (2.0, 10.0, 100.0):
            for lam in (-0.2, 0.3):
                coeff = (poisson_family(d)[0] / 2) * lam**4 * q * (q - 4) / (q - 1)
                assert coeff > 0


def test_threshold_report():
    rep = threshold_report("poisson", 30.0)
    assert rep.d_star == pytest.approx(D_STAR_POISSON, abs=1e-12)
    assert rep.lambda_ks == pytest.approx(1 / math.sqrt(30.0), abs=1e-15)
    assert rep.g4_at_minus < 0 and rep.g4_at_plus < 0
    assert rep.regime_flags["antiferro_ks_sharp"]
    rep2 = threshold_report("poisson", 10.0)
    assert rep2.regime_flags["below_d_star"]
    assert rep2.g4_at_minus > 0
    bare = threshold_report("regular")
    assert bare.lambda_ks is None and bare.d_star == pytest.approx(D_STAR_REGULAR)
