import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hdboot.errors import DegenerateFold, DimensionMismatch, SaturatedFit, Unidentifiable
from hdboot.lasso import (
    _cd_gram,
    cv_folds,
    estimate_sigma,
    fit_lasso,
    kkt_violation,
    lambda_grid,
    lambda_max,
    objective,
    select_lambda_cv,
)

import oracles

# n=6, p=3 instance, drawn once and frozen
X6 = np.array([
    [-0.2112, -0.5177, 0.1496],
    [-1.7899, 0.2845, -0.3217],
    [-0.7261, 0.0985, -1.9515],
    [-0.1584, -0.7313, 0.4097],
    [0.4424, -0.9279, -0.9332],
    [-1.47, -0.7877, 0.3194],
])
Y6 = np.array([0.3048, -1.8635, -0.7649, -0.053, 0.9651, -1.3209])
# accelerated proximal gradient to a 5e-14 duality gap (oracles.lasso_fista)
BETA6 = np.array([0.919178330033072, -0.14306264119727574, 0.0])


def _problem(seed, n=30, p=12, s=3):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[:s] = rng.uniform(1, 2, s)
    return X, X @ beta + rng.standard_normal(n)


def test_frozen_instance_matches_convex_oracle():
    fit = fit_lasso(X6, Y6, 0.2)
    np.testing.assert_allclose(fit.beta, BETA6, atol=1e-7)
    assert fit.active_set.tolist() == [0, 1]


def test_oracle_reproduces_frozen_solution():
    beta, gap = oracles.lasso_fista(X6, Y6, 0.2)
    assert gap < 1e-10
    np.testing.assert_allclose(beta, BETA6, atol=1e-9)


def test_penalty_above_lambda_max_gives_zero():
    X, y = _problem(0)
    fit = fit_lasso(X, y, lambda_max(X, y) * 1.0001)
    assert not fit.beta.any()
    assert fit.s_hat == 0


def test_orthonormal_columns_unpenalized():
    rng = np.random.default_rng(1)
    Q, _ = np.linalg.qr(rng.standard_normal((40, 5)))
    X = Q * math.sqrt(40)
    y = rng.standard_normal(40)
    fit = fit_lasso(X, y, 0.0)
    np.testing.assert_allclose(fit.beta, X.T @ y / 40, atol=1e-12)


def test_lambda_zero_matches_normal_equations():
    X, y = _problem(2, n=50, p=10)
    fit = fit_lasso(X, y, 0.0)
    ref = np.linalg.solve(X.T @ X, X.T @ y)
    np.testing.assert_allclose(fit.beta, ref, rtol=1e-8)


@pytest.mark.parametrize("shape", [(5, 5), (5, 8)])
def test_lambda_zero_needs_p_below_n(shape):
    X = np.random.default_rng(3).standard_normal(shape)
    with pytest.raises(Unidentifiable):
        fit_lasso(X, np.ones(shape[0]), 0.0)


def test_lambda_zero_rank_deficient():
    X = np.random.default_rng(3).standard_normal((10, 3))
    X[:, 2] = X[:, 0] + X[:, 1]
    with pytest.raises(Unidentifiable):
        fit_lasso(X, np.ones(10), 0.0)


def test_zero_column_rejected():
    X = np.random.default_rng(4).standard_normal((10, 3))
    X[:, 1] = 0.0
    with pytest.raises(Unidentifiable, match=r"\[1\]"):
        fit_lasso(X, np.ones(10), 0.1)


def test_shape_errors():
    X = np.ones((5, 2)) + np.eye(5, 2)
    with pytest.raises(DimensionMismatch):
        fit_lasso(X, np.ones(4), 0.1)
    with pytest.raises(ValueError):
        fit_lasso(X, np.ones(5), -1.0)


def test_result_is_read_only():
    fit = fit_lasso(X6, Y6, 0.2)
    with pytest.raises(ValueError):
        fit.beta[0] = 1.0


def test_warm_start_and_gram_agree():
    X, y = _problem(5)
    lam = 0.3
    a = fit_lasso(X, y, lam)
    b = fit_lasso(X, y, lam, gram=X.T @ X / X.shape[0], warm_start=np.ones(X.shape[1]))
    np.testing.assert_allclose(a.beta, b.beta, atol=1e-7)


def test_sigma_formula():
    from hdboot.lasso import LassoFit

    r = np.zeros(10)
    r[:4] = 1.0  # ||r||^2 = 4
    beta = np.array([1.0, -2.0] + [0.0] * 3)
    fit = LassoFit(beta=beta, lam=0.1, residuals=r)
    assert estimate_sigma(fit, 10) == pytest.approx(math.sqrt(4 / 8), rel=1e-15)
    assert estimate_sigma(fit, 10, "n") == pytest.approx(math.sqrt(4 / 10), rel=1e-15)
    zero = LassoFit(beta=beta, lam=0.1, residuals=np.zeros(10))
    assert estimate_sigma(zero, 10) == 0.0


def test_sigma_recomputed_by_summation():
    fit = fit_lasso(X6, Y6, 0.2)
    rss = 0.0
    for i in range(6):
        e = Y6[i] - sum(X6[i, k] * BETA6[k] for k in range(3))
        rss += e * e
    assert fit.sigma_hat == pytest.approx(math.sqrt(rss / (6 - 2)), rel=1e-7)


def test_sigma_saturated():
    from hdboot.lasso import LassoFit

    fit = LassoFit(beta=np.ones(4), lam=0.1, residuals=np.ones(4))
    with pytest.raises(SaturatedFit):
        estimate_sigma(fit, 4)


def test_sparsity_path_on_fixtures():
    for seed in range(3):
        X, y = _problem(seed, n=40, p=20)
        grid = lambda_grid(X, y, 12, 0.5)
        sizes = [fit_lasso(X, y, lam).s_hat for lam in grid]
        assert sizes == sorted(sizes)


# cross-validation -----------------------------------------------------------

def _cv_fixture():
    rng = np.random.default_rng(99)
    X = rng.standard_normal((40, 10))
    beta = np.zeros(10)
    beta[:2] = [1.0, -0.7]
    return X, X @ beta + rng.standard_normal(40)


def test_cv_matches_independent_split_oracle():
    # oracles.cv_choice with FISTA fits and the Philox CV permutation selects
    # grid index 6 of this 20-point grid
    X, y = _cv_fixture()
    grid = lambda_grid(X, y, 20, 0.01)
    assert select_lambda_cv(X, y, 5, grid, seed=1) == grid[6]
    assert grid[6] == pytest.approx(0.508462435020689, rel=1e-12)


def test_cv_oracle_agrees_on_fixture():
    X, y = _cv_fixture()
    grid = lambda_grid(X, y, 20, 0.01)
    perm = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(1, spawn_key=(1,)))).permutation(40)
    lam, _ = oracles.cv_choice(X, y, grid, 5, perm,
                               lambda A, b, l: oracles.lasso_fista(A, b, l, tol=1e-11)[0])
    assert lam == select_lambda_cv(X, y, 5, grid, seed=1)


def test_cv_folds_are_contiguous_blocks_of_permutation():
    folds = cv_folds(23, 5, seed=4)
    assert [len(f) for f in folds] == [5, 5, 5, 4, 4]
    np.testing.assert_array_equal(np.sort(np.concatenate(folds)), np.arange(23))


def test_cv_singleton_grid():
    X, y = _cv_fixture()
    lmax = lambda_max(X, y)
    assert select_lambda_cv(X, y, 5, [lmax]) == lmax


def test_cv_pure_noise_stays_on_grid():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((30, 15))
    y = rng.standard_normal(30)
    grid = lambda_grid(X, y)
    assert select_lambda_cv(X, y, 10, grid, seed=3) in grid


def test_cv_argument_checks():
    X, y = _cv_fixture()
    with pytest.raises(ValueError):
        select_lambda_cv(X, y, 5, [0.1, 0.2])
    with pytest.raises(ValueError):
        select_lambda_cv(X, y, 1)
    with pytest.raises(ValueError):
        select_lambda_cv(X, y, 5, [])
    with pytest.raises(DegenerateFold):
        select_lambda_cv(X, y, 40)


# properties -----------------------------------------------------------------

designs = st.integers(0, 2**32 - 1).map(lambda s: _problem(s, n=25, p=15))


@settings(max_examples=40, deadline=None)
@given(designs, st.floats(0.02, 0.9))
def test_kkt_at_solution(data, frac):
    X, y = data
    fit = fit_lasso(X, y, frac * lambda_max(X, y))
    assert kkt_violation(fit, X) < 1e-6
    np.testing.assert_allclose(fit.residuals, y - X @ fit.beta, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(designs, st.floats(0.02, 0.9))
def test_duality_gap_certificate(data, frac):
    X, y = data
    lam = frac * lambda_max(X, y)
    fit = fit_lasso(X, y, lam)
    obj = objective(X, y, fit.beta, lam)
    assert oracles.duality_gap(X, y, lam, fit.beta) <= 1e-7 * (1 + obj) + 1e-12


@settings(max_examples=25, deadline=None)
@given(designs, st.floats(0.02, 0.5))
def test_objective_never_increases(data, frac):
    X, y = data
    n = X.shape[0]
    lam = frac * lambda_max(X, y)
    G, c, yy = X.T @ X / n, X.T @ y / n, float(y @ y / n)
    prev = objective(X, y, np.zeros(X.shape[1]), lam)
    for k in range(1, 30):
        beta = np.zeros(X.shape[1])
        _cd_gram(G, c, yy, lam, beta, -1, k, 1e-8, 1e-7)
        cur = objective(X, y, beta, lam)
        assert cur <= prev + 1e-12
        prev = cur


@settings(max_examples=25, deadline=None)
@given(designs, st.floats(0.05, 0.9), st.floats(0.1, 10.0))
def test_scale_equivariance(data, frac, scale):
    X, y = data
    lam = frac * lambda_max(X, y)
    a = fit_lasso(X, y, lam)
    b = fit_lasso(X, scale * y, scale * lam)
    np.testing.assert_allclose(b.beta, scale * a.beta, atol=1e-6 * scale)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-3, 3)),
       arrays(np.float64, 6, elements=st.floats(-3, 3)),
       st.floats(0.05, 1.0))
def test_matches_fista_on_small_problems(X, y, lam):
    if np.any(np.abs(X).sum(axis=0) < 1e-3):
        return
    fit = fit_lasso(X, y, lam)
    ref, _ = oracles.lasso_fista(X, y, lam, tol=1e-12)
    f_ref = objective(X, y, ref, lam)
    assert objective(X, y, fit.beta, lam) <= f_ref + 1e-6 * (1 + f_ref)
