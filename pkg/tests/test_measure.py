import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfnash.measure import (
    EmpiricalMeasure,
    MeasureFlow,
    dw_to_dirac0,
    empirical,
    fit_rate,
    flow_distance,
    iid_rate_experiment,
    moment_q,
    read_rate_csv,
    theoretical_alpha,
    wasserstein2,
)
from mfnash.sde import build_time_grid

from oracles import w2_assignment, w2_linprog, w2_permutation

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
atoms = st.lists(finite, min_size=1, max_size=12)


def test_empirical_examples():
    np.testing.assert_array_equal(empirical([3, 1, 2]).atoms, [1, 2, 3])
    np.testing.assert_array_equal(empirical([5]).atoms, [5])
    assert empirical([0, 0, 0]) == EmpiricalMeasure(np.zeros(3))
    with pytest.raises(ValueError):
        empirical([])
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.array([2.0, 1.0]))


def test_measure_is_immutable():
    mu = empirical([1.0, 2.0])
    with pytest.raises(ValueError):
        mu.atoms[0] = 5.0


def test_w2_examples():
    assert wasserstein2(empirical([0, 1]), empirical([0, 2])) == pytest.approx(np.sqrt(0.5), abs=1e-15)
    mu = empirical([0.3, -1.2, 4.0])
    assert wasserstein2(mu, mu) == 0.0
    assert wasserstein2(mu, empirical(mu.atoms + 2.5)) == pytest.approx(2.5, abs=1e-12)


def test_w2_against_permutation_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 7))
        x, y = rng.normal(size=n), rng.normal(size=n) * 2
        assert abs(wasserstein2(empirical(x), empirical(y)) - w2_permutation(x, y)) < 1e-12


def test_w2_unequal_sizes_against_lp():
    rng = np.random.default_rng(1)
    for _ in range(60):
        n, m = rng.integers(1, 9, size=2)
        x, y = rng.normal(size=n), rng.uniform(-2, 2, size=m)
        got = wasserstein2(empirical(x), empirical(y))
        assert abs(got - w2_linprog(x, y)) < 1e-7
        assert abs(got - w2_assignment(x, y)) < 1e-12


@settings(max_examples=150, deadline=None)
@given(atoms, atoms)
def test_w2_symmetric_nonnegative(x, y):
    a, b = empirical(x), empirical(y)
    d = wasserstein2(a, b)
    assert d >= 0
    assert d == pytest.approx(wasserstein2(b, a), rel=1e-12, abs=1e-9)


@settings(max_examples=150, deadline=None)
@given(atoms, atoms, atoms)
def test_w2_triangle(x, y, z):
    a, b, c = empirical(x), empirical(y), empirical(z)
    assert wasserstein2(a, c) <= wasserstein2(a, b) + wasserstein2(b, c) + 1e-7


@settings(max_examples=100, deadline=None)
@given(atoms, atoms, st.floats(-10, 10), st.floats(0.1, 10))
def test_w2_scaling(x, y, shift, scale):
    a, b = empirical(x), empirical(y)
    d = wasserstein2(a, b)
    d2 = wasserstein2(empirical(np.asarray(x) * scale + shift), empirical(np.asarray(y) * scale + shift))
    assert d2 == pytest.approx(scale * d, rel=1e-8, abs=1e-6)


def test_moments():
    mu = empirical([-2.0, 1.0])
    assert moment_q(mu, 2) == 2.5
    assert moment_q(mu, 3) == pytest.approx(4.5)
    assert dw_to_dirac0(mu) == pytest.approx(np.sqrt(2.5))
    assert dw_to_dirac0(mu) == pytest.approx(wasserstein2(mu, empirical([0.0])))
    with pytest.raises(ValueError):
        moment_q(mu, 0)


def test_flow_from_states_and_distance():
    g = build_time_grid(1, 2)
    s = np.array([[3.0, 1.0, 2.0, 9.0], [0.0, 0.0, 1.0, 1.0], [5.0, 4.0, 6.0, 4.0]]).T  # (m, K+1)
    fl = MeasureFlow.from_states(g, s)
    np.testing.assert_array_equal(fl.atoms[0], [1, 2, 3, 9])
    assert fl.m == 4
    assert fl.row(2).shape == (1, 4)
    np.testing.assert_array_equal(flow_distance(fl, fl), 0.0)
    with pytest.raises(ValueError):
        MeasureFlow(g, np.zeros((2, 3)))


# -- rate fits -------------------------------------------------------------------


def test_fit_exact_power_law():
    n = np.array([10.0, 20, 40, 80, 160])
    fit = fit_rate(n, 3.0 / n)
    assert abs(fit.slope + 1) < 1e-10
    assert abs(fit_rate(n, np.full(5, 2.0)).slope) < 1e-12


def test_fit_noisy_half_rate():
    # synthetic regression oracle
    rng = np.random.default_rng(3)
    n = 100.0 * 2 ** np.arange(8)
    y = 2.0 * n**-0.5 * (1 + 0.01 * rng.standard_normal(n.size))
    assert abs(fit_rate(n, y).slope + 0.5) < 0.02


def test_fit_errors_and_guard():
    with pytest.raises(ValueError):
        fit_rate([1, 2], [1, 1])
    with pytest.raises(ValueError):
        fit_rate([1, 2, 3], [1, 0, 1])
    n = np.array([10.0, 20, 40, 80, 160])
    y = 1.0 / n
    y[0] *= 5  # pre-asymptotic first rung
    fit = fit_rate(n, y, guard=True)
    assert fit.excluded == [10.0] and abs(fit.slope + 1) < 1e-10
    assert fit_rate(n, 1.0 / n, guard=True).excluded == []


def test_read_rate_csv():
    n, v = read_rate_csv("n,value\n10,0.1\n# note\n20,0.05,extra\n")
    np.testing.assert_array_equal(n, [10, 20])
    np.testing.assert_array_equal(v, [0.1, 0.05])


def test_alpha():
    assert theoretical_alpha(6) == 0.5
    assert theoretical_alpha(3) == pytest.approx(1 / 3)


def test_iid_experiment_degenerate_and_guards():
    res = iid_rate_experiment(lambda rng, n: np.zeros(n), 6, [10, 20, 40, 80], 50, 0, ref_factor=10)
    assert res.fit is None and "zero variance" in res.diagnostic
    with pytest.raises(ValueError):
        iid_rate_experiment(lambda rng, n: rng.random(n), 6, [10, 20, 40], 50, 0)
    with pytest.raises(ValueError):
        iid_rate_experiment(lambda rng, n: rng.random(n), 6, [10, 20, 40, 80], 10, 0)


def test_iid_experiment_gaussian_slope():
    res = iid_rate_experiment(lambda rng, n: rng.standard_normal(n), 6, [50, 100, 200, 400], 60, 4, ref_factor=50)
    assert res.fit.slope < -0.7
    assert res.to_csv().splitlines()[0] == "n,mean_sq_distance,stderr"
