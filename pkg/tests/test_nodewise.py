import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdboot.errors import DegenerateProjection
from hdboot.nodewise import default_lambda_x, nodewise_residuals

import oracles


def toeplitz(n, p, rho, seed):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((n, p))
    X = np.empty((n, p))
    X[:, 0] = e[:, 0]
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + math.sqrt(1 - rho**2) * e[:, j]
    return X


def test_default_lambda_x_arithmetic():
    assert default_lambda_x(100, 500) == pytest.approx(0.24929, abs=1e-5)
    assert default_lambda_x(30, 2000) == pytest.approx(0.50335, abs=1e-5)
    assert default_lambda_x(100, 500, c=2.0) == pytest.approx(2 * math.sqrt(math.log(500) / 100))


def test_default_lambda_x_guards():
    with pytest.raises(OverflowError):
        default_lambda_x(100, math.inf)
    with pytest.raises(ValueError):
        default_lambda_x(1, 10)


def test_orthogonal_columns_project_to_themselves():
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.standard_normal((20, 4)))
    for lam in (0.0, 0.1, 1.0):
        proj = nodewise_residuals(Q, lam)
        np.testing.assert_allclose(proj.gamma, 0.0, atol=1e-12)
        np.testing.assert_allclose(proj.Z, Q, atol=1e-12)


def test_single_column():
    X = np.random.default_rng(1).standard_normal((10, 1))
    proj = nodewise_residuals(X)
    np.testing.assert_array_equal(proj.Z, X)


def test_toeplitz_fixture_matches_per_column_oracle():
    X = toeplitz(30, 5, 0.9, seed=11)
    lam = math.sqrt(math.log(5) / 30)
    proj = nodewise_residuals(X, lam)
    for j in range(5):
        others = np.delete(np.arange(5), j)
        g, gap = oracles.lasso_fista(X[:, others], X[:, j], lam, tol=1e-13)
        assert gap < 1e-10
        np.testing.assert_allclose(proj.gamma_minus_j(j), g, atol=1e-6)
        np.testing.assert_allclose(proj.Z[:, j], X[:, j] - X[:, others] @ g, atol=1e-5)
        assert proj.zx_inner[j] > 0


def test_lambda_zero_is_ols_residual():
    X = toeplitz(40, 6, 0.5, seed=2)
    proj = nodewise_residuals(X, 0.0)
    for j in range(6):
        others = np.delete(np.arange(6), j)
        coef = np.linalg.solve(X[:, others].T @ X[:, others], X[:, others].T @ X[:, j])
        np.testing.assert_allclose(proj.Z[:, j], X[:, j] - X[:, others] @ coef, atol=1e-10)


def test_exactly_explained_column_is_degenerate():
    X = toeplitz(20, 3, 0.3, seed=3)
    X[:, 2] = X[:, 0] + X[:, 1]
    with pytest.raises(DegenerateProjection, match=r"\[0, 1, 2\]"):
        nodewise_residuals(X, 0.0)


def test_empty_targets():
    with pytest.raises(ValueError):
        nodewise_residuals(np.eye(5, 3) + 1.0, 0.1, targets=[])


def test_per_column_cv_records_penalties():
    X = toeplitz(30, 6, 0.9, seed=4)
    proj = nodewise_residuals(X, cv_per_column=True, cv_seed=1)
    assert proj.lambda_x_per_target.shape == (6,)
    assert np.all(proj.lambda_x_per_target > 0)


def test_threads_do_not_change_result():
    X = toeplitz(50, 30, 0.9, seed=5)
    a = nodewise_residuals(X, threads=1)
    b = nodewise_residuals(X, threads=4)
    np.testing.assert_array_equal(a.Z, b.Z)
    np.testing.assert_array_equal(a.gamma, b.gamma)


fixtures = st.tuples(st.integers(0, 2**31), st.integers(8, 25), st.sampled_from([0.0, 0.5, 0.9]))


@settings(max_examples=30, deadline=None)
@given(fixtures, st.floats(0.05, 0.8))
def test_reconstruction_and_kkt(fx, lam):
    seed, p, rho = fx
    X = toeplitz(20, p, rho, seed)
    n = X.shape[0]
    proj = nodewise_residuals(X, lam)
    for k, j in enumerate(proj.targets):
        others = np.delete(np.arange(p), j)
        recon = X[:, j] - X[:, others] @ proj.gamma_minus_j(k)
        assert np.max(np.abs(proj.Z[:, k] - recon)) < 1e-10
        grad = X[:, others].T @ proj.Z[:, k] / n
        g = proj.gamma_minus_j(k)
        act = g != 0
        assert np.all(np.abs(grad) <= lam / 2 + 1e-6)
        np.testing.assert_allclose(grad[act], lam / 2 * np.sign(g[act]), atol=1e-6)
        # Z^T X_j = ||Z||^2 + n lam ||gamma||_1 / 2 under the stationarity conditions
        lhs = proj.zx_inner[k]
        rhs = proj.z_norm2[k] + n * lam * np.abs(g).sum() / 2
        assert lhs == pytest.approx(rhs, rel=1e-5, abs=1e-8)
        assert lhs > 0


@settings(max_examples=20, deadline=None)
@given(fixtures, st.sets(st.integers(0, 7), min_size=1, max_size=8))
def test_column_independence(fx, subset):
    seed, p, rho = fx
    X = toeplitz(20, p, rho, seed)
    full = nodewise_residuals(X)
    targets = sorted(subset)
    part = nodewise_residuals(X, targets=targets)
    np.testing.assert_array_equal(part.Z, full.Z[:, targets])
    np.testing.assert_array_equal(part.zx_inner, full.zx_inner[targets])
