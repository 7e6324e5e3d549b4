"""The numba and numpy kernels must agree."""

import numpy as np
import pytest

from mfnash import kernels

rng = np.random.default_rng(7)


@pytest.mark.parametrize("n,m", [(1, 1), (5, 5), (3, 7), (12, 5), (100, 1000)])
def test_w2_sorted_backends(n, m):
    x = np.sort(rng.normal(size=n))
    y = np.sort(rng.normal(size=m) + 0.3)
    a = kernels.w2_sq_sorted_np(x, y)
    b = kernels.w2_sq_sorted_nb(x, y)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-14)


def test_rows_to_ref_matches_merge():
    ref = np.sort(rng.normal(size=2000))
    xs = np.sort(rng.normal(size=(6, 30)), axis=1)
    want = np.array([kernels.w2_sq_sorted_np(r, ref) for r in xs])
    np.testing.assert_allclose(kernels.w2_sq_rows_to_ref_np(xs, ref), want, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(kernels.w2_sq_rows_to_ref_np(xs, ref, budget=50), want, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(kernels.w2_sq_rows_to_ref_nb(xs, ref), want, rtol=1e-12, atol=1e-15)


def test_rows_to_ref_identical_is_zero():
    # a 4-atom measure against itself with every atom tripled
    xs = np.sort(rng.normal(size=(1, 4)), axis=1)
    ref = np.repeat(xs[0], 3)
    assert kernels.w2_sq_rows_to_ref_np(xs, ref)[0] == 0.0
    assert kernels.w2_sq_rows_to_ref_nb(xs, ref)[0] == 0.0


def test_interp_backends():
    fp = rng.normal(size=11)
    xq = rng.uniform(-1.0, 2.5, size=(4, 9))
    a = kernels.interp_uniform_np(xq, 0.0, 0.2, fp)
    b = kernels.interp_uniform_nb(xq, 0.0, 0.2, fp)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_hjb_layer_backends():
    J, na = 41, 9
    v = rng.normal(size=J)
    drift = 0.05 * rng.normal(size=J)
    hv = np.full(J, 0.004)
    acts = np.linspace(-1, 1, na)
    beta = np.repeat(acts[:, None], J, axis=1)
    run = rng.random((na, J)) * 0.01
    out_np = kernels.hjb_layer_np(v, -2.0, 0.1, drift, hv, beta, 0.05, run)
    out_nb = kernels.hjb_layer_nb(v, -2.0, 0.1, drift, hv, beta, 0.05, run)
    np.testing.assert_allclose(out_np[0], out_nb[0], rtol=0, atol=1e-13)
    np.testing.assert_array_equal(out_np[1], out_nb[1])
    assert out_np[2] == out_nb[2]


def test_policy_eval_backends():
    table = rng.uniform(-1.5, 1.5, size=(6, 21))
    xq = rng.uniform(-3, 3, size=(3, 50))
    for t in (0.0, 0.13, 0.5, 1.0, 2.0):
        a = kernels.policy_eval_np(table, 0.0, 0.2, -2.0, 0.2, t, xq, -1.0, 1.0)
        b = kernels.policy_eval_nb(table, 0.0, 0.2, -2.0, 0.2, t, xq, -1.0, 1.0)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)
        assert a.min() >= -1.0 and a.max() <= 1.0
