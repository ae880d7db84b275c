import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtri

from dgqmc.lattice import (NORMAL, UNIFORM, W_FLOOR, GeneratingVector, ShiftSet, inverse_normal_cdf,
                           lattice_points, load_generating_vector, normal_cdf, pairwise_sum,
                           qmc_estimate, save_generating_vector, shift_center_uniform,
                           shift_transform_normal)


def test_lattice_point_examples():
    pts = lattice_points([1, 3], 4)
    np.testing.assert_array_equal(pts[0], [0.25, 0.75])
    np.testing.assert_array_equal(pts[3], [0.0, 0.0])


@pytest.mark.parametrize("n", [1, 2, 7, 64])
def test_unit_generator_enumerates(n):
    pts = lattice_points([1, 5], n)
    expected = np.r_[np.arange(1, n) / n, 0.0]
    np.testing.assert_array_equal(pts[:, 0], expected)


def test_lattice_points_validation():
    with pytest.raises(ValueError):
        lattice_points([1, 3], 0)
    with pytest.raises(ValueError):
        lattice_points([1, 3], 8, s=3)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 256), st.lists(st.integers(0, 10 ** 6), min_size=1, max_size=4))
def test_point_set_is_group(n, z):
    pts = lattice_points(z, n)
    keys = {tuple(np.rint(p * n).astype(int) % n) for p in pts}
    idx = np.rint(pts * n).astype(np.int64)
    sums = (idx[:, None, :] + idx[None, :, :]) % n
    assert {tuple(v) for v in sums.reshape(-1, len(z))} <= keys


def test_shift_center_examples():
    assert shift_center_uniform(np.array([[0.75]]), np.array([0.5])).values[0, 0] == pytest.approx(-0.25)
    t = np.array([[0.1, 0.6]])
    np.testing.assert_allclose(shift_center_uniform(t, np.zeros(2)).values, t - 0.5)


def test_shift_center_range():
    rng = np.random.default_rng(0)
    sm = shift_center_uniform(rng.random((10_000, 3)), rng.random(3))
    assert sm.domain == UNIFORM
    assert sm.values.min() >= -0.5 and sm.values.max() < 0.5


def test_inverse_normal_examples():
    assert inverse_normal_cdf(0.5) == 0.0
    assert inverse_normal_cdf(0.975) == pytest.approx(1.9599640, abs=1e-7)


def test_inverse_normal_symmetry():
    w = np.random.default_rng(1).random(1000)
    np.testing.assert_allclose(inverse_normal_cdf(1 - w), -inverse_normal_cdf(w), atol=1e-12)


def test_inverse_normal_against_scipy():
    w = np.concatenate([np.random.default_rng(2).random(5000), np.logspace(-300, -1, 200)])
    np.testing.assert_allclose(inverse_normal_cdf(w), ndtri(w), rtol=1e-13, atol=1e-14)


@pytest.mark.parametrize("w", [0.0, 1.0, -0.1, float("nan")])
def test_inverse_normal_domain(w):
    with pytest.raises(ValueError):
        inverse_normal_cdf(w)


def test_normal_cdf_against_mpmath():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 40
    for x in np.linspace(-30, 8, 77):
        exact = float(mpmath.ncdf(x))
        assert normal_cdf(x) == pytest.approx(exact, rel=1e-14)


def test_shift_transform_normal_centre_and_clamp():
    assert shift_transform_normal(np.array([[0.25]]), np.array([0.25])).values[0, 0] == 0.0
    pts = lattice_points([1, 3], 8)
    sm = shift_transform_normal(pts, np.zeros(2))
    assert sm.domain == NORMAL
    assert np.all(np.isfinite(sm.values))
    assert sm.values[-1, 0] == pytest.approx(ndtri(W_FLOOR), rel=1e-12)


def test_shift_transform_normal_mean():
    n = 2 ** 12
    sm = shift_transform_normal(lattice_points([1], n), ShiftSet.generate(1, 1, 7).shifts[0])
    assert abs(sm.values.mean()) <= 3 / math.sqrt(n)


def test_qmc_constant_integrand():
    pts = lattice_points([1, 3, 5], 16)
    samples = [shift_center_uniform(pts, d) for d in ShiftSet.generate(4, 3, 0).shifts]
    means, grand = qmc_estimate(lambda y: 2.5, samples)
    np.testing.assert_array_equal(means, 2.5)
    assert grand == 2.5


def test_qmc_linear_symmetric():
    pts = lattice_points([1, 7], 32)
    _, grand = qmc_estimate(lambda y: y[0], [shift_center_uniform(pts, np.full(2, 0.5 / 32))])
    assert abs(grand) <= 1e-12


def test_qmc_single_shift_is_plain_rule():
    pts = lattice_points([1, 5], 16)
    sm = shift_center_uniform(pts, np.array([0.3, 0.7]))
    means, grand = qmc_estimate(lambda y: y @ y, [sm])
    assert grand == pytest.approx(np.mean(np.sum(sm.values ** 2, axis=1)), rel=1e-14)
    assert means.shape == (1,)


def test_qmc_vector_valued():
    pts = lattice_points([1, 3], 8)
    means, grand = qmc_estimate(lambda y: np.array([1.0, y[0]]), [shift_center_uniform(pts, np.zeros(2))])
    assert means.shape == (1, 2) and grand[0] == 1.0


def test_qmc_evaluator_failure_reports_location():
    pts = lattice_points([1], 4)

    def bad(y):
        raise FloatingPointError("boom")

    with pytest.raises(RuntimeError, match="shift 0, point 0"):
        qmc_estimate(bad, [shift_center_uniform(pts, np.zeros(1))])


def test_shift_unbiasedness():
    # mean over independent shifts of the estimate of E[y1 + y1 y2] = 0
    n = 2 ** 10
    pts = lattice_points([1, 433], n)
    ests = []
    for seed in range(200):
        sm = shift_center_uniform(pts, ShiftSet.generate(1, 2, seed).shifts[0])
        ests.append(np.mean(sm.values[:, 0] + sm.values[:, 0] * sm.values[:, 1]))
    ests = np.array(ests)
    assert abs(ests.mean()) <= 4 * ests.std(ddof=1) / math.sqrt(len(ests))


def test_shifts_reproducible():
    a = ShiftSet.generate(8, 5, 12345)
    b = ShiftSet.generate(8, 5, 12345)
    np.testing.assert_array_equal(a.shifts, b.shifts)
    assert len(a) == 8
    c = ShiftSet.generate(3, 5, 12345)
    np.testing.assert_array_equal(a.shifts[:3], c.shifts)
    assert not np.array_equal(ShiftSet.generate(8, 5, 1).shifts, a.shifts)
    pts = lattice_points([1, 3, 5, 7, 9], 64)
    for d1, d2 in zip(a.shifts, b.shifts):
        np.testing.assert_array_equal(shift_transform_normal(pts, d1).values,
                                      shift_transform_normal(pts, d2).values)


def test_pairwise_sum():
    v = np.random.default_rng(0).random((37, 3))
    np.testing.assert_allclose(pairwise_sum(v), v.sum(axis=0), rtol=1e-14)
    assert pairwise_sum(np.array([4.0])) == 4.0


def test_load_plain(tmp_path):
    p = tmp_path / "z.txt"
    p.write_text("1\n3\n")
    gv = load_generating_vector(p, 4, 2)
    np.testing.assert_array_equal(gv.z, [1, 3])


def test_load_pairs(tmp_path):
    p = tmp_path / "z.txt"
    p.write_text("1 1\n2 182667\n")
    gv = load_generating_vector(p, 1024, 2)
    np.testing.assert_array_equal(gv.z, [1, 182667 % 1024])


def test_load_too_short(tmp_path):
    p = tmp_path / "z.txt"
    p.write_text("1\n3\n")
    with pytest.raises(ValueError):
        load_generating_vector(p, 4, 3)


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "z.txt"
    p.write_text("1\nthree\n")
    with pytest.raises(ValueError, match=":2:"):
        load_generating_vector(p, 4, 2)


@pytest.mark.parametrize("pairs", [False, True])
def test_save_load_round_trip(tmp_path, pairs):
    gv = GeneratingVector(np.array([1, 19, 27, 23]), 64)
    p = tmp_path / "z.txt"
    save_generating_vector(gv, p, pairs=pairs)
    np.testing.assert_array_equal(load_generating_vector(p, 64, 4).z, gv.z)
