import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import expit

from xtrial.glm import (
    DesignMatrix,
    fit_fluctuation,
    fit_linear,
    fit_logistic,
    independent_columns,
    predict,
)


# ---------------------------------------------------------------- oracles

def newton_logistic(x, y, w, offset=None, iters=200):
    """Plain Newton-Raphson on the weighted Bernoulli log-likelihood."""
    off = np.zeros(len(y)) if offset is None else offset
    beta = np.zeros(x.shape[1])
    for _ in range(iters):
        p = expit(off + x @ beta)
        grad = x.T @ (w * (y - p))
        hess = (x * (w * p * (1 - p))[:, None]).T @ x
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.max(np.abs(step)) < 1e-14:
            break
    return beta


def normal_equations(x, y, w):
    xtw = x.T * w
    return np.linalg.solve(xtw @ x, xtw @ y)


def grid_bisect_fluctuation(off, h, y, w):
    """Root of the fluctuation score by a coarse grid then bisection."""
    def score(e):
        return float(np.sum(w * h * (y - expit(off + e * h))))
    grid = np.linspace(-10, 10, 2001)
    vals = np.array([score(e) for e in grid])
    k = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    lo, hi = grid[k], grid[k + 1]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.sign(score(mid)) == np.sign(score(lo)):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def random_logistic(seed, n=50, p=3):
    r = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), r.normal(size=(n, p - 1))])
    beta = r.normal(scale=0.7, size=p)
    y = (r.random(n) < expit(x @ beta)).astype(float)
    w = r.uniform(0.2, 3.0, n)
    return x, y, w


# ---------------------------------------------------------------- logistic

def test_intercept_only_symmetric():
    fit = fit_logistic(np.ones((4, 1)), np.array([0, 1, 0, 1.0]))
    assert fit.converged and abs(fit.coefficients[0]) < 1e-14


def test_separation_flagged():
    x = np.column_stack([np.ones(8), np.arange(8.0)])
    y = (np.arange(8) >= 4).astype(float)
    fit = fit_logistic(x, y)
    assert not fit.converged and fit.separated
    assert np.all(np.isfinite(fit.coefficients))


@pytest.mark.parametrize("seed", range(100))
def test_irls_matches_newton(seed):
    x, y, w = random_logistic(seed)
    fit = fit_logistic(x, y, w)
    assert fit.converged
    np.testing.assert_allclose(fit.coefficients, newton_logistic(x, y, w), atol=1e-8, rtol=0)


@pytest.mark.parametrize("seed", range(10))
def test_irls_offset_and_fractional_outcome(seed):
    r = np.random.default_rng(seed)
    x, _, w = random_logistic(seed, n=80)
    y = r.uniform(size=80)
    off = r.normal(size=80)
    fit = fit_logistic(x, y, w, offset=off)
    np.testing.assert_allclose(fit.coefficients, newton_logistic(x, y, w, off), atol=1e-8)


@pytest.mark.parametrize("seed", range(20))
def test_score_equations(seed):
    x, y, w = random_logistic(seed, n=120, p=4)
    fit = fit_logistic(x, y, w)
    p = predict(fit, x)
    assert np.max(np.abs(x.T @ (w * (y - p)))) <= 1e-8 * w.sum()


def test_zero_coefficient_predict_half():
    x = np.column_stack([np.ones(5), np.arange(5.0)])
    fit = fit_logistic(x, np.array([0, 1, 0, 1, 1.0]))
    zero = type(fit)("logistic", np.zeros(2), True, 0, 0.0)
    np.testing.assert_array_equal(predict(zero, x), 0.5)


@pytest.mark.parametrize("bad", [
    dict(y=np.zeros(3)),
    dict(w=np.zeros(4)),
    dict(w=-np.ones(4)),
    dict(y=np.array([0, 2.0, 0, 1])),
])
def test_logistic_contract_errors(bad):
    args = dict(x=np.ones((4, 1)), y=np.array([0, 1, 0, 1.0]), w=None) | bad
    with pytest.raises(ValueError):
        fit_logistic(args["x"], args["y"], args["w"])


def test_logistic_deterministic():
    x, y, w = random_logistic(7)
    a, b = fit_logistic(x, y, w), fit_logistic(x, y, w)
    assert a.coefficients.tobytes() == b.coefficients.tobytes()


# ---------------------------------------------------------------- linear

def test_linear_exact():
    x1 = np.arange(1.0, 7.0)
    fit = fit_linear(np.column_stack([np.ones(6), x1]), 2 * x1)
    np.testing.assert_allclose(fit.coefficients, [0, 2], atol=1e-12)
    np.testing.assert_allclose(predict(fit, np.column_stack([np.ones(6), x1])), 2 * x1,
                               atol=1e-12)


def test_linear_duplicate_column_dropped(rng):
    x1 = rng.normal(size=30)
    y = 1 + 3 * x1 + rng.normal(size=30)
    base = fit_linear(np.column_stack([np.ones(30), x1]), y)
    dup = fit_linear(np.column_stack([np.ones(30), x1, x1]), y)
    assert dup.coefficients[2] == 0.0 and dup.dropped == (2,)
    xd = np.column_stack([np.ones(30), x1, x1])
    np.testing.assert_allclose(predict(dup, xd), predict(base, xd[:, :2]), atol=1e-12)


@pytest.mark.parametrize("seed", range(100))
def test_wls_matches_normal_equations(seed):
    r = np.random.default_rng(1000 + seed)
    x = np.column_stack([np.ones(100), r.normal(size=(100, 3))])
    y = x @ r.normal(size=4) + r.normal(size=100)
    w = r.uniform(0.1, 2.0, 100)
    fit = fit_linear(x, y, w)
    np.testing.assert_allclose(fit.coefficients, normal_equations(x, y, w), atol=1e-8, rtol=0)
    resid = x.T @ (w * (y - x @ fit.coefficients))
    assert np.max(np.abs(resid)) <= 1e-8 * np.abs(x.T @ (w * y)).max()


def test_predict_column_mismatch():
    fit = fit_linear(np.column_stack([np.ones(4), np.arange(4.0)]), np.arange(4.0))
    with pytest.raises(ValueError):
        predict(fit, np.ones((4, 3)))


def test_independent_columns_keeps_intercept(rng):
    a = rng.normal(size=20)
    x = np.column_stack([np.ones(20), a, 2 * a - 1, rng.normal(size=20)])
    assert independent_columns(x) == [0, 1, 3]


# ---------------------------------------------------------------- design

def test_design_matrix_requires_intercept_and_finite():
    with pytest.raises(ValueError):
        DesignMatrix(np.ones((3, 0)), ())
    with pytest.raises(ValueError):
        DesignMatrix(np.array([[1.0], [np.nan]]), ("(intercept)",))


# ---------------------------------------------------------------- fluctuation

def test_fluctuation_already_solved():
    off = np.array([-1.0, 0.0, 0.5, 2.0])
    fl = fit_fluctuation(off, np.array([1.0, 2, 3, 4]), expit(off))
    assert fl.converged and abs(fl.epsilon) < 1e-12


def test_fluctuation_zero_covariate():
    fl = fit_fluctuation(np.zeros(3), np.zeros(3), np.array([0.1, 0.5, 0.9]))
    assert fl.converged and fl.epsilon == 0.0


def test_fluctuation_rejects_infinite_offset():
    with pytest.raises(ValueError):
        fit_fluctuation(np.array([0.0, np.inf]), np.ones(2), np.array([0.2, 0.3]))


@pytest.mark.parametrize("seed", range(30))
def test_fluctuation_vs_grid_oracle(seed):
    r = np.random.default_rng(500 + seed)
    n = 60
    off = r.normal(size=n)
    h = r.uniform(0.5, 4.0, n)
    y = np.clip(expit(off + r.normal(0.4, 0.3, n)), 0, 1)
    w = r.uniform(0.5, 1.5, n)
    fl = fit_fluctuation(off, h, y, w)
    assert fl.converged
    score = np.sum(w * h * (y - expit(off + fl.epsilon * h)))
    assert abs(score) <= 1e-10
    assert abs(fl.epsilon - grid_bisect_fluctuation(off, h, y, w)) < 1e-9


@given(c=st.floats(0.1, 20.0), seed=st.integers(0, 10_000))
def test_fluctuation_rescaling(c, seed):
    r = np.random.default_rng(seed)
    off = r.normal(size=40)
    h = r.uniform(0.5, 3.0, 40)
    y = r.uniform(size=40)
    a = fit_fluctuation(off, h, y)
    b = fit_fluctuation(off, c * h, y)
    assert abs(b.epsilon - a.epsilon / c) <= 1e-8 * max(1.0, abs(a.epsilon / c))
    np.testing.assert_allclose(expit(off + b.epsilon * c * h), expit(off + a.epsilon * h),
                               atol=1e-10)


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=30))
def test_intercept_logistic_recovers_mean(ys):
    y = np.array(ys)
    if 0 < y.mean() < 1:
        fit = fit_logistic(np.ones((len(y), 1)), y)
        assert abs(expit(fit.coefficients[0]) - y.mean()) < 1e-8
