import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from hdboot.despars import (
    desparsify,
    normal_approx_inference,
    plain_se,
    studentize,
)
from hdboot.errors import DegenerateVariance, DimensionMismatch, SaturatedFit
from hdboot.lasso import LassoFit, fit_lasso, select_lambda_cv
from hdboot.nodewise import nodewise_residuals

import oracles
from test_nodewise import toeplitz


def pipeline(X, y, lam=None, lambda_x=None, **kw):
    if lam is None:
        lam = select_lambda_cv(X, y, seed=0)
    fit = fit_lasso(X, y, lam)
    proj = nodewise_residuals(X, lambda_x)
    return desparsify(X, y, fit, proj, **kw)


def _fixture(seed=7, n=20, p=8):
    X = toeplitz(n, p, 0.9, seed)
    beta = np.zeros(p)
    beta[[1, 4]] = [1.5, -1.0]
    y = X @ beta + np.random.default_rng(seed + 1000).standard_normal(n)
    return X, y


def test_formula_oracle_on_frozen_fixture():
    X, y = _fixture()
    res = pipeline(X, y)
    b, sp, sr = oracles.desparsified(X, y, np.asarray(res.fit.beta), np.asarray(res.proj.Z),
                                     res.targets, res.fit.s_hat)
    np.testing.assert_allclose(res.b_hat, b, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(res.se_plain, sp, rtol=1e-10)
    np.testing.assert_allclose(res.se_robust, sr, rtol=1e-10)


def test_two_forms_of_the_estimator_agree():
    X, y = _fixture(seed=3, n=30, p=12)
    res = pipeline(X, y)
    beta = np.asarray(res.fit.beta)
    for k, j in enumerate(res.targets):
        z = res.proj.Z[:, k]
        zx = z @ X[:, j]
        other = sum(z @ X[:, m] / zx * beta[m] for m in range(X.shape[1]) if m != j)
        assert res.b_hat[k] == pytest.approx(z @ y / zx - other, rel=1e-8, abs=1e-12)


def test_ols_reduction():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((20, 3))
    y = X @ [1.0, 0.0, -2.0] + rng.standard_normal(20)
    res = pipeline(X, y, lam=0.0, lambda_x=0.0)
    beta, se = oracles.ols(X, y)
    np.testing.assert_allclose(res.b_hat, beta, rtol=1e-8)
    np.testing.assert_allclose(res.se_plain, se, rtol=1e-6)


def test_zero_residuals_are_degenerate():
    X, _ = _fixture()
    beta = np.zeros(8)
    beta[0] = 1.0
    y = X @ beta
    fit = LassoFit(beta=beta, lam=0.1, residuals=np.zeros(20))
    proj = nodewise_residuals(X)
    with pytest.raises(DegenerateVariance):
        desparsify(X, y, fit, proj)


def test_saturated_fit():
    X, y = _fixture()
    fit = LassoFit(beta=np.ones(8), lam=0.1, residuals=y - X @ np.ones(8))
    with pytest.raises(SaturatedFit):
        desparsify(X[:8], y[:8], LassoFit(beta=np.ones(8), lam=0.1, residuals=np.ones(8)),
                   nodewise_residuals(X[:8]))
    assert desparsify(X, y, fit, nodewise_residuals(X)).b_hat.shape == (8,)


def test_shape_mismatch():
    X, y = _fixture()
    res = pipeline(X, y)
    with pytest.raises(DimensionMismatch):
        desparsify(X, y[:-1], res.fit, res.proj)


def test_n_denominators():
    X, y = _fixture()
    a = pipeline(X, y)
    b = pipeline(X, y, sigma_denominator="n", omega_denominator="n")
    s = a.fit.s_hat
    np.testing.assert_allclose(b.se_plain, a.se_plain * math.sqrt((20 - s) / 20), rtol=1e-12)
    np.testing.assert_allclose(b.se_robust, a.se_robust * math.sqrt((20 - s) / 20), rtol=1e-12)


def test_studentize():
    X, y = _fixture()
    res = pipeline(X, y)
    np.testing.assert_array_equal(studentize(res, res.b_hat), 0.0)
    np.testing.assert_allclose(studentize(res, None, "robust"), res.b_hat / res.se_robust)
    np.testing.assert_allclose(studentize(res, None, "plain"), res.b_hat / res.se_plain)
    np.testing.assert_allclose(res.t_stats, res.b_hat / res.se_robust)
    with pytest.raises(DimensionMismatch):
        studentize(res, [0.0])


def test_studentize_arithmetic():
    X, y = _fixture()
    res = pipeline(X, y)
    b = res.b_hat.copy()
    b[0] = 0.5
    se = res.se_robust.copy()
    se[0] = 0.25
    from dataclasses import replace

    res2 = replace(res, b_hat=b, se_robust=se)
    assert studentize(res2)[0] == 2.0


def _with(res, b, se):
    from dataclasses import replace

    k = res.b_hat.size
    return replace(res, b_hat=np.full(k, b), se_robust=np.full(k, se), se_plain=np.full(k, se))


def test_normal_inference_examples():
    X, y = _fixture()
    res = pipeline(X, y)
    out = normal_approx_inference(_with(res, 1.0, 0.5), 0.05)
    # 1.959963984540054 = Phi^{-1}(0.975) from the inverse error function
    z = math.sqrt(2) * 1.3859038243496777
    assert abs(z - 1.959963984540054) < 1e-12
    np.testing.assert_allclose(out.lower, 1 - 0.5 * z, atol=1e-12)
    np.testing.assert_allclose(out.upper, 1 + 0.5 * z, atol=1e-12)
    assert out.lower[0] == pytest.approx(0.0200, abs=1e-4)
    assert out.upper[0] == pytest.approx(1.9800, abs=1e-4)
    assert normal_approx_inference(_with(res, 0.0, 1.0)).pvalues[0] == 1.0
    p = normal_approx_inference(_with(res, 1.959964, 1.0)).pvalues[0]
    assert p == pytest.approx(0.05, abs=1e-6)


def test_alpha_zero_gives_whole_line():
    X, y = _fixture()
    out = normal_approx_inference(pipeline(X, y), 0.0)
    assert np.all(np.isneginf(out.lower)) and np.all(np.isposinf(out.upper))
    with pytest.raises(ValueError):
        normal_approx_inference(pipeline(X, y), 1.0)


def test_plain_se_helper():
    assert plain_se(np.array([4.0]), np.array([-2.0]), 3.0)[0] == 3.0


def test_robust_matches_plain_under_homoscedasticity():
    rng = np.random.default_rng(2000)
    X = rng.standard_normal((2000, 5))
    y = X @ [1.0, 0.5, 0, 0, 0] + rng.standard_normal(2000)
    res = pipeline(X, y, lam=0.01)
    assert np.median(np.abs(res.se_robust / res.se_plain - 1)) < 0.1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 20.0))
def test_scale_equivariance(seed, c):
    X, y = _fixture(seed=seed % 1000, n=25, p=10)
    lam = select_lambda_cv(X, y, seed=0)
    a = pipeline(X, y, lam=lam)
    b = pipeline(X, c * y, lam=c * lam)
    np.testing.assert_allclose(b.b_hat, c * a.b_hat, rtol=1e-5, atol=1e-7 * c)
    np.testing.assert_allclose(b.se_plain, c * a.se_plain, rtol=1e-5)
    np.testing.assert_allclose(b.se_robust, c * a.se_robust, rtol=1e-5)
    null = np.linspace(-1, 1, a.b_hat.size)
    np.testing.assert_allclose(studentize(b, c * null), studentize(a, null), rtol=1e-4, atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_standard_errors_positive_and_pvalues_valid(seed):
    X, y = _fixture(seed=seed % 1000, n=25, p=10)
    res = pipeline(X, y)
    assert np.all(res.se_plain > 0) and np.all(res.se_robust > 0)
    out = normal_approx_inference(res, 0.1)
    assert np.all((out.pvalues >= 0) & (out.pvalues <= 1))
    np.testing.assert_allclose(out.pvalues, 2 * norm.sf(np.abs(res.t_stats)))
