import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from dgqmc.random_field import RandomFieldSpec
from dgqmc.theory import (PODWeights, affine_b, alpha_lognormal, bernoulli2, cbc_construct,
                          lambda_from_p, lognormal_dim_factor, ordered_bell, ordered_bell_bound_holds,
                          regularity_bound, riemann_zeta, summability_exponent, varrho_lognormal,
                          varrho_uniform, weights_affine, weights_for, weights_lognormal)


# -- special functions ----------------------------------------------------------

def test_zeta_closed_forms():
    assert riemann_zeta(2.0) == pytest.approx(math.pi ** 2 / 6, rel=1e-14)
    assert riemann_zeta(4.0) == pytest.approx(math.pi ** 4 / 90, rel=1e-14)
    assert riemann_zeta(1.5) == pytest.approx(2.612375, abs=1e-6)


@pytest.mark.parametrize("x", [1.01, 1.1, 1.25, 1.5, 1.75, 2.0, 2.6, 3.0, 7.5, 30.0])
def test_zeta_against_mpmath(x):
    assert riemann_zeta(x) == pytest.approx(float(mpmath.zeta(x)), rel=1e-13)


def test_zeta_domain():
    with pytest.raises(ValueError):
        riemann_zeta(1.0)


def test_varrho_uniform_values():
    assert varrho_uniform(1.0) == pytest.approx(1 / 6, rel=1e-14)
    expected = 2 * float(mpmath.zeta(1.5)) / (2 * math.pi ** 2) ** 0.75
    assert varrho_uniform(0.75) == pytest.approx(expected, rel=1e-13)
    assert varrho_uniform(0.75) == pytest.approx(0.5579, abs=1e-4)


@pytest.mark.parametrize("lam", [0.5, 0.3, 1.2])
def test_varrho_uniform_domain(lam):
    with pytest.raises(ValueError):
        varrho_uniform(lam)


def test_varrho_lognormal_lambda_one():
    alpha = 0.7
    expected = 2 * (math.sqrt(2 * math.pi) * math.exp(4 * alpha ** 2)
                    / (math.pi ** 1.5 * 0.75 * 0.25)) * float(mpmath.zeta(1.5))
    assert varrho_lognormal(1.0, alpha) == pytest.approx(expected, rel=1e-13)


def test_varrho_lognormal_monotone_in_alpha():
    for lam in (0.6, 0.8, 1.0):
        vals = [varrho_lognormal(lam, a) for a in np.linspace(0.1, 2.0, 25)]
        assert np.all(np.diff(vals) > 0)


def test_varrho_lognormal_blows_up_near_half():
    assert varrho_lognormal(0.5 + 1e-3, 0.1) > 1e5
    assert varrho_lognormal(0.5 + 1e-6, 0.5) == math.inf
    with pytest.raises(ValueError):
        varrho_lognormal(0.5, 0.5)


# -- lambda ---------------------------------------------------------------------

def test_lambda_examples():
    assert lambda_from_p(0.8) == pytest.approx(2 / 3, rel=1e-15)
    assert lambda_from_p(0.5, 0.1) == pytest.approx(1 / 1.8, rel=1e-15)
    assert lambda_from_p(2 / 3, 0.25) == pytest.approx(1 / 1.5, rel=1e-15)


def test_lambda_second_branch_needs_eps():
    with pytest.raises(ValueError):
        lambda_from_p(0.5)
    with pytest.raises(ValueError):
        lambda_from_p(1.0)


@given(st.floats(1e-6, 1 - 1e-9), st.floats(1e-6, 0.5 - 1e-9))
def test_lambda_in_range(p, eps):
    lam = lambda_from_p(p, eps)
    assert 0.5 < lam <= 1


def test_summability_exponent():
    assert summability_exponent(1.3) == pytest.approx(1 / 1.3 + 0.01)
    assert summability_exponent(1.0001, 0.5) < 1


# -- weights --------------------------------------------------------------------

def test_affine_empty_set_and_singletons():
    b = np.array([0.3, 0.1, 0.05])
    w = weights_affine(b, 1.0)
    assert w.gamma([]) == 1.0
    np.testing.assert_allclose([w.gamma([j]) for j in range(3)], math.sqrt(6) * b, rtol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-3, 2.0), min_size=6, max_size=6), st.floats(0.51, 1.0),
       st.sets(st.integers(0, 5), max_size=5), st.integers(0, 5))
def test_affine_ratio_identity(b, lam, u, j):
    if j in u:
        return
    w = weights_affine(b, lam)
    bt = b[j] / math.sqrt(varrho_uniform(lam))
    ratio = w.gamma(sorted(u | {j})) / w.gamma(sorted(u))
    assert ratio == pytest.approx(((len(u) + 1) * bt) ** (2 / (1 + lam)), rel=1e-12)


def test_affine_b_from_spec():
    spec = RandomFieldSpec(mode="affine", s=10)
    a_min = 5 - 0.5 * spec.amplitudes.sum()
    np.testing.assert_allclose(affine_b(spec), spec.amplitudes / a_min, rtol=1e-15)
    np.testing.assert_allclose(affine_b(spec, c_dg=2.0, alpha=4.0), 0.5 * spec.amplitudes / a_min)


def test_alpha_examples():
    assert alpha_lognormal(0.0, 1.0) == pytest.approx(math.sqrt(0.5) / 2, rel=1e-15)
    assert alpha_lognormal(0.0, 1.0) == pytest.approx(0.3535534, abs=1e-7)
    b = 2 ** -1.3
    assert alpha_lognormal(b, 1.0) == pytest.approx(0.5 * (b + math.sqrt(b * b + 0.5)), rel=1e-15)
    assert alpha_lognormal(0.40613, 1.0) == pytest.approx(0.61078, abs=1e-5)


def test_alpha_guard():
    for beta in (1e3, 1e9):
        with pytest.warns(RuntimeWarning):
            a = alpha_lognormal(beta, 1.0)
        assert math.isfinite(a) and a >= beta * (1 + 1e-6)


def test_lognormal_zero_beta_and_empty_set():
    w = weights_lognormal([0.0, 0.3], 0.8)
    assert w.gamma([0]) == 0.0
    assert w.gamma([]) == 1.0


def test_lognormal_singleton_oracle():
    beta, lam = 0.40613, 2 / 3
    mpmath.mp.dps = 30
    es = (2 * lam - 1) / (4 * lam)
    alpha = (beta + mpmath.sqrt(beta ** 2 + 1 - 1 / (2 * lam))) / 2
    rho = 2 * (mpmath.sqrt(2 * mpmath.pi) * mpmath.e ** (alpha ** 2 / es)
               / (mpmath.pi ** (2 - 2 * es) * (1 - es) * es)) ** lam * mpmath.zeta(lam + 0.5)
    factor = beta / (2 * mpmath.log(2) * mpmath.e ** (beta ** 2 / 2) * norm.cdf(beta)
                     * mpmath.sqrt((alpha - beta) * rho))
    expected = float(factor ** (2 / (1 + lam)))
    assert weights_lognormal([beta], lam).gamma([0]) == pytest.approx(expected, rel=1e-12)
    assert lognormal_dim_factor(beta, lam) == pytest.approx(float(factor), rel=1e-12)


def test_weights_for_modes():
    wa = weights_for(RandomFieldSpec(mode="affine", s=12))
    wl = weights_for(RandomFieldSpec(mode="lognormal", s=12))
    p = 1 / 1.3 + 0.01
    assert wa.lam == pytest.approx(p / (2 - p))
    assert wa.s == wl.s == 12
    assert np.all(np.diff(wa.dim_factors) <= 0) and np.all(np.diff(wl.dim_factors) <= 1e-15)


def test_pod_weights_validation():
    with pytest.raises(ValueError):
        PODWeights(np.array([0.1, -0.2]), 1.0)
    with pytest.raises(ValueError):
        PODWeights(np.array([0.1]), 0.4)


# -- CBC ------------------------------------------------------------------------

def worst_case_error_sq(z, n, w: PODWeights):
    """Direct evaluation over all nonempty subsets with unfolded B_2({k z_j / n})."""
    s = len(z)
    total = 0.0
    for k in range(n):
        vals = [bernoulli2((k * zj % n) / n) for zj in z]
        for size in range(1, s + 1):
            for u in itertools.combinations(range(s), size):
                total += w.gamma(u) * math.prod(vals[j] for j in u)
    return total / n


def exhaustive(n, s, w):
    cands = range(1, n, 2)
    scored = [(worst_case_error_sq(z, n, w), z) for z in itertools.product(cands, repeat=s)]
    best = min(e for e, _ in scored)
    return best, [z for e, z in scored if e <= best + 1e-12 * abs(best) + 1e-15]


WEIGHT_SETS = {
    "unit": PODWeights(np.ones(3), 1.0, order_factor=lambda l: 1.0),
    "affine": weights_for(RandomFieldSpec(mode="affine", s=3)),
    "lognormal": weights_for(RandomFieldSpec(mode="lognormal", s=3)),
}
SKEWED = weights_lognormal([0.9, 0.5, 0.2], 0.8)


@pytest.mark.parametrize("name", sorted(WEIGHT_SETS))
@pytest.mark.parametrize("n", [4, 8, 16])
@pytest.mark.parametrize("s", [1, 2, 3])
def test_cbc_attains_exhaustive_minimum(n, s, name):
    w = WEIGHT_SETS[name]
    gv = cbc_construct(n, s, w)
    best, argmin = exhaustive(n, s, w)
    assert tuple(int(v) for v in gv.z) in argmin
    assert gv.errors[-1] == pytest.approx(best, rel=1e-12)
    assert worst_case_error_sq(gv.z, n, w) == pytest.approx(best, rel=1e-12)


@pytest.mark.parametrize("n", [4, 8, 16, 32])
def test_cbc_stagewise_optimal(n):
    gv = cbc_construct(n, 3, SKEWED)
    for j in range(1, 4):
        prefix = tuple(int(v) for v in gv.z[:j - 1])
        errs = {c: worst_case_error_sq(prefix + (c,), n, SKEWED) for c in range(1, n, 2)}
        best = min(errs.values())
        first = min(c for c, e in errs.items() if e <= best * (1 + 1e-12))
        assert gv.z[j - 1] == first
        assert gv.errors[j - 1] == pytest.approx(best, rel=1e-12)


def test_cbc_greedy_can_miss_global_minimum():
    # component-by-component is greedy; with strongly unequal weights the
    # third component cannot undo an earlier choice
    gv = cbc_construct(16, 3, SKEWED)
    best, argmin = exhaustive(16, 3, SKEWED)
    assert tuple(int(v) for v in gv.z) not in argmin
    assert gv.errors[-1] / best == pytest.approx(1.0094, abs=1e-4)


@pytest.mark.parametrize("n", [2, 8, 64, 1024])
def test_cbc_first_component_is_one(n):
    assert cbc_construct(n, 1, weights_for(RandomFieldSpec(mode="affine", s=4))).z[0] == 1


def test_cbc_errors_positive_and_odd():
    gv = cbc_construct(256, 20, weights_for(RandomFieldSpec(mode="lognormal", s=20)))
    assert np.all(np.isfinite(gv.errors)) and np.all(gv.errors > 0)
    assert np.all(gv.z % 2 == 1)


def test_cbc_validation():
    w = weights_for(RandomFieldSpec(mode="affine", s=4))
    with pytest.raises(ValueError):
        cbc_construct(12, 2, w)
    with pytest.raises(ValueError):
        cbc_construct(16, 5, w)
    with pytest.raises(ValueError):
        cbc_construct(1 << 10, 4, w, capacity=1 << 10)


def test_cbc_truncation_is_small():
    w = weights_for(RandomFieldSpec(mode="affine", s=12))
    full = cbc_construct(128, 12, w, max_order=12)
    trunc = cbc_construct(128, 12, w, max_order=8)
    np.testing.assert_array_equal(full.z, trunc.z)
    assert abs(full.errors[-1] - trunc.errors[-1]) < 1e-12


# -- ordered Bell numbers and regularity ----------------------------------------

def test_ordered_bell_values():
    assert [ordered_bell(k) for k in range(6)] == [1, 1, 3, 13, 75, 541]


def test_ordered_bell_against_stirling_sum():
    # Lambda_k = sum_j j! S(k, j)
    for k in range(16):
        ref = sum(math.factorial(j) * int(mpmath.stirling2(k, j)) for j in range(k + 1))
        assert ordered_bell(k) == ref


def test_ordered_bell_bound():
    assert 13 <= math.factorial(3) / math.log(2) ** 3
    assert math.factorial(3) / math.log(2) ** 3 == pytest.approx(18.01, abs=0.01)
    assert all(ordered_bell_bound_holds(k) for k in range(16))


def test_ordered_bell_limits():
    with pytest.raises(ValueError):
        ordered_bell(-1)
    with pytest.raises(OverflowError):
        ordered_bell(20, max_k=10)


def test_regularity_affine():
    spec = RandomFieldSpec(mode="affine", s=5)
    base = regularity_bound("affine", [0, 0, 0], spec)
    assert base == pytest.approx(1 / math.sqrt(3))
    b = affine_b(spec)
    assert regularity_bound("affine", [1, 0], spec) == pytest.approx(b[0] * base, rel=1e-14)
    assert regularity_bound("affine", [2, 1], spec) == pytest.approx(6 * b[0] ** 2 * b[1] * base, rel=1e-14)


def test_regularity_lognormal():
    spec = RandomFieldSpec(mode="lognormal", s=4)
    y = np.array([0.3, -1.0, 0.2, 0.0])
    a_min = math.exp(-np.abs(y) @ spec.amplitudes)
    beta = spec.amplitudes
    expected = 16 * 2 / math.log(2) ** 2 * beta[0] * beta[1] / math.sqrt(a_min) / math.sqrt(3)
    assert regularity_bound("lognormal", [1, 1], spec, y) == pytest.approx(expected, rel=1e-13)
    sharp = regularity_bound("lognormal", [1, 1], spec, y, sharp=True)
    assert sharp == pytest.approx(expected * 3 / (2 / math.log(2) ** 2), rel=1e-13)
    assert sharp <= expected


def test_regularity_validation():
    spec = RandomFieldSpec(mode="lognormal", s=3)
    with pytest.raises(ValueError):
        regularity_bound("lognormal", [2, 0], spec, np.zeros(3))
    with pytest.raises(ValueError):
        regularity_bound("lognormal", [1, 0], spec)
    with pytest.raises(ValueError):
        regularity_bound("affine", [-1], RandomFieldSpec(mode="affine", s=3))


@pytest.mark.parametrize("mode", ["affine", "lognormal"])
@pytest.mark.parametrize("n", [2, 4, 8, 32, 128, 1024])
def test_cbc_fast_matches_plain(mode, n):
    w = weights_for(RandomFieldSpec(mode=mode, s=25))
    s = 3 if n <= 8 else 25
    a = cbc_construct(n, s, w, method="plain")
    b = cbc_construct(n, s, w, method="fast")
    np.testing.assert_array_equal(a.z, b.z)
    np.testing.assert_allclose(a.errors, b.errors, rtol=1e-8)


def test_cbc_fast_large_n_odd_and_decreasing_error():
    w = weights_for(RandomFieldSpec(mode="affine", s=10))
    errs = [cbc_construct(n, 10, w).errors[-1] for n in (2 ** 13, 2 ** 14, 2 ** 15)]
    assert errs[0] > errs[1] > errs[2] > 0
    assert np.all(cbc_construct(2 ** 15, 10, w).z % 2 == 1)


def test_cbc_rejects_unknown_method():
    with pytest.raises(ValueError):
        cbc_construct(8, 2, weights_for(RandomFieldSpec(mode="affine", s=2)), method="spectral")
