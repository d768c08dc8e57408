import numpy as np
import pytest
from conftest import make_pair
from hypothesis import given, settings
from hypothesis import strategies as st

from mirake.designs import make_scenario
from mirake.diagnostics import (
    TestResult,
    bandwidth_grid,
    gof_linearity_test,
    kernel_regression,
    loo_bandwidth,
    mle_raking_lr_correlation,
    mp_null_threshold,
    mp_statistic,
    mp_test,
    reference_bandwidth,
)
from mirake.errors import DegenerateVariance, InvalidInput

X10 = np.array([0.3, -1.2, 0.8, 2.1, -0.4, 1.5, -2.0, 0.1, 0.9, -0.7])
Y10 = np.array([1.0, -0.5, 0.4, 2.2, 0.0, 1.1, -1.8, 0.6, 0.3, -0.2])


def brute_force(x, y, h, loo=False):
    out = np.empty(x.size)
    for i in range(x.size):
        num = den = 0.0
        for j in range(x.size):
            if loo and i == j:
                continue
            k = np.exp(-0.5 * ((x[i] - x[j]) / h) ** 2)
            num += k * y[j]
            den += k
        out[i] = num / den
    return out


def test_kernel_matches_double_loop():
    kf = kernel_regression(X10, Y10, 0.5, method="exact")
    np.testing.assert_allclose(kf.fitted, brute_force(X10, Y10, 0.5), atol=1e-12)
    cv = np.sum((Y10 - brute_force(X10, Y10, 0.5, loo=True)) ** 2)
    assert kf.cv_score == pytest.approx(cv, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), h=st.floats(0.05, 5.0), n=st.integers(2, 40))
def test_kernel_matches_double_loop_random(seed, h, n):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(n), rng.standard_normal(n)
    kf = kernel_regression(x, y, h, method="exact")
    np.testing.assert_allclose(kf.fitted, brute_force(x, y, h), atol=1e-10)


def test_kernel_limits():
    flat = kernel_regression(X10, Y10, 1e6 * np.ptp(X10), method="exact")
    np.testing.assert_allclose(flat.fitted, Y10.mean(), atol=1e-6)
    sharp = kernel_regression(X10, Y10, 1e-4, method="exact")
    np.testing.assert_allclose(sharp.fitted, Y10, atol=1e-12)


def test_kernel_underflow_falls_back_to_neighbour():
    x = np.array([0.0, 100.0, 250.0])
    kf = kernel_regression(x, np.array([1.0, 2.0, 4.0]), 1e-3, method="exact")
    np.testing.assert_allclose(kf.fitted, [1, 2, 4])
    # leave-one-out weights all underflow, so each point is predicted by its nearest neighbour
    assert kf.cv_score == pytest.approx((1 - 2) ** 2 + (2 - 1) ** 2 + (4 - 2) ** 2)
    with pytest.raises(InvalidInput):
        kernel_regression(X10, Y10, 0.0)


def test_binned_close_to_exact():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(3000)
    y = np.sin(x) + 0.3 * rng.standard_normal(3000)
    a = kernel_regression(x, y, 0.3, method="exact").fitted
    b = kernel_regression(x, y, 0.3, method="binned").fitted
    assert np.max(np.abs(a - b)) < 5e-3


def test_loo_bandwidth_noise_oversmooths():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(1000)
        y = rng.standard_normal(1000)
        h = loo_bandwidth(x, y)
        grid = bandwidth_grid(x)
        hits += h >= grid[int(0.75 * grid.size)]
    assert hits >= 90


def test_loo_bandwidth_sharp_signal_undersmooths():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-2, 2, 500)
        y = np.sin(6 * x) + 0.2 * rng.standard_normal(500)
        h = loo_bandwidth(x, y)
        grid = bandwidth_grid(x)
        hits += h <= grid[grid.size // 2]
    assert hits >= 90


def test_loo_bandwidth_flat_curve_returns_reference():
    x = np.array([0.0, 1.0, 2.0])
    assert loo_bandwidth(x, np.ones(3)) == pytest.approx(reference_bandwidth(x))


def test_gof_detects_cubic():
    rng = np.random.default_rng(1)
    # bounded x: with Gaussian x the few extreme cubic residuals dominate the wild resamples
    x = rng.uniform(-2, 2, 300)
    y = x**3 + 0.1 * rng.standard_normal(300)
    res = gof_linearity_test(x, y, B=200, rng=np.random.SeedSequence(2))
    assert res.p_value < 0.01 and res.reject
    assert res.bootstrap_reps == 200


def test_gof_affine_invariance_in_x():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(80)
    y = x + 0.4 * x**2 + rng.standard_normal(80)
    a = gof_linearity_test(x, y, B=50, rng=np.random.SeedSequence(4))
    b = gof_linearity_test(3 * x - 7, y, B=50, rng=np.random.SeedSequence(4))
    assert a.p_value == pytest.approx(b.p_value, abs=1 / 51 + 1e-12)
    assert a.statistic == pytest.approx(b.statistic, rel=1e-3)


def test_gof_logistic_runs_and_validates():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(200)
    y = (rng.random(200) < 1 / (1 + np.exp(-x))).astype(float)
    res = gof_linearity_test(x, y, B=50, rng=np.random.SeedSequence(6), family="logistic")
    assert 0 <= res.p_value <= 1
    with pytest.raises(InvalidInput):
        gof_linearity_test(x, y, B=10)
    with pytest.raises(InvalidInput):
        gof_linearity_test(x[:5], y[:5], B=50)


def test_test_result_validation():
    with pytest.raises(InvalidInput):
        TestResult(0.0, 1.5, False, "x")


def test_mp_statistic_zero_when_models_coincide(add_pair, cc_pair):
    c, s = add_pair
    assert mp_statistic(c, (0.0, 1.0, 1.0)) == pytest.approx(0.0, abs=1e-9)
    assert mp_statistic(c, (0.0, 1.0, 1.0), s) == pytest.approx(0.0, abs=1e-9)
    c, s = cc_pair
    sc = c.scenario
    assert mp_statistic(c, (sc.alpha0, sc.beta0)) == pytest.approx(0.0, abs=1e-9)
    assert mp_statistic(c, (sc.alpha0, sc.beta0), s) == pytest.approx(0.0, abs=1e-9)


def test_mp_degenerate_null_randomises_to_level():
    sc = make_scenario("case_control", 1.0, 0.0)
    theta = (sc.alpha0, sc.beta0)
    c_, gamma = mp_null_threshold(sc, theta, "cohort", 0.05, 200, 0)
    assert c_ == 0.0 and gamma == pytest.approx(0.05)
    rng = np.random.default_rng(0)
    c, _ = make_pair("case_control", seed=2)
    rejects = [mp_test(c, theta_star=theta, scope="cohort", threshold=(c_, gamma), rng=rng).reject
               for _ in range(4000)]
    assert abs(np.mean(rejects) - 0.05) < 0.015


def test_mp_size_under_null():
    sc = make_scenario("surrogate_additive", 1.0, 0.0, N=500)
    theta = (0.0, 1.1, 1.0)  # any simple null; the data come from this model
    thr = mp_null_threshold(sc, theta, "cohort", 0.05, 2000, 1)
    from mirake.diagnostics import _null_cohort

    rng = np.random.default_rng(9)
    rej = np.mean([mp_test(_null_cohort(sc, theta, rng), theta_star=theta, scope="cohort",
                           threshold=thr).reject for _ in range(2000)])
    assert abs(rej - 0.05) < 0.02


def test_mp_input_checks(add_pair):
    c, s = add_pair
    with pytest.raises(InvalidInput):
        mp_test(c, theta_star=(0.0, 1.0), scope="cohort")
    with pytest.raises(InvalidInput):
        mp_test(c, theta_star=(0.0, 1.0, 1.0), scope="phase2")
    with pytest.raises(InvalidInput):
        mp_test(c, s, theta_star=(0.0, 1.0, 1.0), scope="bogus")


def test_correlation_affine_and_degenerate():
    rng = np.random.default_rng(7)
    x = rng.standard_normal(50)
    assert mle_raking_lr_correlation(2 * x + 3, np.zeros(50), x) == pytest.approx(1.0)
    a, b, lr = rng.standard_normal((3, 50))
    r = mle_raking_lr_correlation(a, b, lr)
    assert mle_raking_lr_correlation(-3 * a + 1, -3 * b, 5 * lr - 2) == pytest.approx(r)
    with pytest.raises(DegenerateVariance):
        mle_raking_lr_correlation(np.ones(5), np.zeros(5), x[:5])
    with pytest.raises(InvalidInput):
        mle_raking_lr_correlation(x[:2], x[:2], x[:2])
