"""l1-penalized least squares by cyclic coordinate descent.

The objective is

    ||y - X beta||_2^2 / n + lam * ||beta||_1

with no factor 1/2 in front of the loss.  A value ``lam`` here equals
``2 * alpha`` in the ``(1 / (2n)) ||y - X beta||^2 + alpha ||beta||_1``
convention used by glmnet and scikit-learn.

Columns are never standardized inside the solver.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import rng as _rng
from .errors import (
    DegenerateFold,
    DimensionMismatch,
    NonConvergence,
    SaturatedFit,
    Unidentifiable,
)


@dataclass(frozen=True)
class SolverOptions:
    """Convergence controls for :func:`fit_lasso`.

    The solver stops once the largest coordinate change of a full sweep is
    below ``tol_change`` and the duality gap is below
    ``tol_gap * (1 + objective)``.
    """

    tol_change: float = 1e-8
    tol_gap: float = 1e-7
    max_iter: int = 100_000
    kkt_tol: float = 1e-6
    sigma_denominator: str = "n_minus_s"  # or "n"

    def to_dict(self):
        return dict(self.__dict__)


DEFAULT_OPTIONS = SolverOptions()


def check_design(X):
    """Validate a design matrix and return it as a C-contiguous float array."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"design must be 2-d, got shape {X.shape}")
    n, p = X.shape
    if n < 2 or p < 1:
        raise DimensionMismatch(f"design needs n >= 2 and p >= 1, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DimensionMismatch("design contains non-finite entries")
    zero = np.flatnonzero(~X.any(axis=0))
    if zero.size:
        raise Unidentifiable(f"column(s) {zero.tolist()} are identically zero")
    return X


def check_response(y, n):
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != n:
        raise DimensionMismatch(f"response must have length {n}, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise DimensionMismatch("response contains non-finite entries")
    return y


@njit(cache=True, nogil=True)
def _gap(G, c, yy, lam, beta, g, skip):
    """Objective and duality gap from gram statistics (all scaled by 1/n)."""
    l1 = 0.0
    ctb = 0.0
    btGb = 0.0
    gmax = 0.0
    for j in range(beta.shape[0]):
        l1 += abs(beta[j])
        ctb += c[j] * beta[j]
        btGb += beta[j] * (c[j] - g[j])
        if j != skip and abs(g[j]) > gmax:
            gmax = abs(g[j])
    rr = yy - 2.0 * ctb + btGb
    if rr < 0.0:
        rr = 0.0
    ry = yy - ctb
    primal = rr + lam * l1
    s = 1.0
    if gmax > 0.0 and lam < 2.0 * gmax:
        s = lam / (2.0 * gmax)
    dual = 2.0 * s * ry - s * s * rr
    return primal, primal - dual


@njit(cache=True, nogil=True)
def _newton_polish(G, c, half, beta, act, na):
    """Jump to the minimizer on the current active set and sign pattern.

    Accepted only if every sign is preserved, in which case the objective
    cannot increase.  Returns whether the step was taken.
    """
    idx = np.empty(na, np.int64)
    m = 0
    for u in range(na):
        if beta[act[u]] != 0.0:
            idx[m] = act[u]
            m += 1
    if m == 0:
        return False
    idx = idx[:m]
    A = np.empty((m, m))
    rhs = np.empty(m)
    for a in range(m):
        ja = idx[a]
        rhs[a] = c[ja] - half * np.sign(beta[ja])
        for b in range(m):
            A[a, b] = G[ja, idx[b]]
    try:
        sol = np.linalg.solve(A, rhs)
    except Exception:  # noqa: BLE001 - singular active gram
        return False
    for a in range(m):
        if not np.isfinite(sol[a]) or sol[a] * beta[idx[a]] <= 0.0:
            return False
    for a in range(m):
        beta[idx[a]] = sol[a]
    return True


@njit(cache=True, nogil=True)
def _cd_gram(G, c, yy, lam, beta, skip, max_iter, tol_change, tol_gap):
    """Covariance-update coordinate descent; ``beta`` is updated in place.

    ``G = X^T X / n``, ``c = X^T y / n``, ``yy = y^T y / n``.  Coordinate
    ``skip`` (if >= 0) is held at zero, which lets nodewise regressions share
    the full gram matrix.  Full sweeps alternate with sweeps over the active
    set, during which only the active part of the gradient is maintained.
    Once the sign pattern has been stable for a few active sweeps, a Newton
    step solves the active-set stationarity equations directly.  A full sweep
    without significant change triggers the duality-gap check.
    """
    p = G.shape[0]
    half = 0.5 * lam
    g = c - G @ beta
    act = np.empty(p, np.int64)
    na = 0
    full = True
    stable = 0
    n_iter = 0
    gap = np.inf
    while n_iter < max_iter:
        n_iter += 1
        max_delta = 0.0
        flips = False
        m = p if full else na
        for t in range(m):
            j = t if full else act[t]
            if j == skip:
                continue
            old = beta[j]
            gjj = G[j, j]
            rho = g[j] + gjj * old
            if rho > half:
                new = (rho - half) / gjj
            elif rho < -half:
                new = (rho + half) / gjj
            else:
                new = 0.0
            d = new - old
            if d != 0.0:
                if np.sign(new) != np.sign(old):
                    flips = True
                beta[j] = new
                if full:
                    for k in range(p):
                        g[k] -= G[k, j] * d
                else:
                    for u in range(na):
                        k = act[u]
                        g[k] -= G[k, j] * d
                if abs(d) > max_delta:
                    max_delta = abs(d)
        if max_delta < tol_change:
            if full:
                g = c - G @ beta
                obj, gap = _gap(G, c, yy, lam, beta, g, skip)
                if gap < tol_gap * (1.0 + obj):
                    return n_iter, gap, True
            else:
                full = True
                g = c - G @ beta
        elif full:
            na = 0
            for j in range(p):
                if beta[j] != 0.0:
                    act[na] = j
                    na += 1
            full = False
            stable = 0
        else:
            stable = 0 if flips else stable + 1
            if stable >= 3:
                stable = 0
                if _newton_polish(G, c, half, beta, act, na):
                    full = True
                    g = c - G @ beta
    g = c - G @ beta
    obj, gap = _gap(G, c, yy, lam, beta, g, skip)
    return n_iter, gap, False


def objective(X, y, beta, lam):
    r = y - X @ beta
    return float(r @ r / X.shape[0] + lam * np.abs(beta).sum())


@dataclass(frozen=True)
class LassoFit:
    """Result of :func:`fit_lasso`; arrays are read-only."""

    beta: np.ndarray
    lam: float
    residuals: np.ndarray
    n_iter: int = 0
    gap: float = 0.0
    sigma_denominator: str = "n_minus_s"
    active_set: np.ndarray = field(init=False)

    def __post_init__(self):
        for a in (self.beta, self.residuals):
            a.setflags(write=False)
        active = np.flatnonzero(self.beta != 0.0)
        active.setflags(write=False)
        object.__setattr__(self, "active_set", active)

    @property
    def n(self):
        return self.residuals.shape[0]

    @property
    def s_hat(self):
        return int(self.active_set.size)

    @property
    def sigma_hat(self):
        return estimate_sigma(self, self.n, self.sigma_denominator)

    def summary(self):
        d = {
            "lambda": self.lam,
            "beta": self.beta.tolist(),
            "active_set": self.active_set.tolist(),
            "s_hat": self.s_hat,
            "n_iter": self.n_iter,
            "duality_gap": self.gap,
        }
        try:
            d["sigma_hat"] = self.sigma_hat
        except SaturatedFit:
            d["sigma_hat"] = None
        return d


def _least_squares(X, y):
    n, p = X.shape
    if p >= n:
        raise Unidentifiable(f"lambda = 0 needs p < n, got n={n}, p={p}")
    if np.linalg.matrix_rank(X) < p:
        raise Unidentifiable("lambda = 0 with a rank-deficient design")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return beta


def fit_lasso(X, y, lam, options=None, *, gram=None, warm_start=None):
    """Fit the Lasso at penalty ``lam``.

    Parameters
    ----------
    X : (n, p) array
    y : (n,) array
    lam : float
        Penalty level under the ``||r||^2 / n + lam ||beta||_1`` convention.
        ``lam = 0`` gives ordinary least squares and requires a full-rank
        design with p < n.
    options : SolverOptions, optional
    gram : (p, p) array, optional
        Precomputed ``X.T @ X / n``; reused across fits on a fixed design.
    warm_start : (p,) array, optional

    Returns
    -------
    LassoFit

    Raises
    ------
    Unidentifiable
        For a zero column, or ``lam = 0`` without a full-rank design.
    NonConvergence
        If ``options.max_iter`` sweeps do not certify the duality gap.
    """
    options = options or DEFAULT_OPTIONS
    X = check_design(X)
    n, p = X.shape
    y = check_response(y, n)
    if lam < 0 or not math.isfinite(lam):
        raise ValueError(f"lambda must be finite and >= 0, got {lam}")
    if lam == 0:
        beta = _least_squares(X, y)
        n_iter, gap = 0, 0.0
    else:
        G = X.T @ X / n if gram is None else gram
        c = X.T @ y / n
        beta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=np.float64)
        n_iter, gap, ok = _cd_gram(
            G, c, float(y @ y / n), float(lam), beta, -1,
            options.max_iter, options.tol_change, options.tol_gap,
        )
        if not ok:
            raise NonConvergence(
                f"lasso did not converge in {n_iter} sweeps (gap {gap:.3g})", gap, n_iter
            )
    return LassoFit(
        beta=beta,
        lam=float(lam),
        residuals=y - X @ beta,
        n_iter=int(n_iter),
        gap=float(gap),
        sigma_denominator=options.sigma_denominator,
    )


def kkt_violation(fit, X):
    """Largest violation of the Lasso optimality conditions.

    For active j the scaled gradient ``X_j^T r / n`` must equal
    ``lam / 2 * sign(beta_j)``; elsewhere its magnitude is at most ``lam / 2``.
    """
    n = X.shape[0]
    g = X.T @ fit.residuals / n
    half = fit.lam / 2
    act = fit.beta != 0
    v_act = np.abs(g[act] - half * np.sign(fit.beta[act]))
    v_in = np.maximum(np.abs(g[~act]) - half, 0.0)
    return float(max(v_act.max(initial=0.0), v_in.max(initial=0.0)))


def estimate_sigma(fit, n, denominator="n_minus_s"):
    """Noise level ``sqrt(||residuals||^2 / (n - s_hat))``.

    ``denominator="n"`` gives the ``||residuals||^2 / n`` variant.
    """
    rss = float(fit.residuals @ fit.residuals)
    if denominator == "n":
        return math.sqrt(rss / n)
    if fit.s_hat >= n:
        raise SaturatedFit(f"s_hat = {fit.s_hat} >= n = {n}")
    return math.sqrt(rss / (n - fit.s_hat))


def lambda_max(X, y):
    """Smallest penalty with an all-zero solution."""
    return float(2.0 * np.max(np.abs(X.T @ y)) / X.shape[0])


def lambda_grid(X, y, num=50, ratio=0.01):
    """Log-spaced decreasing grid from ``lambda_max`` to ``ratio * lambda_max``."""
    lmax = lambda_max(X, y)
    return np.geomspace(lmax, ratio * lmax, num)


CV_MAX_R2 = 0.999


def cv_folds(n, folds, seed):
    """Contiguous blocks of a seeded permutation of ``range(n)``."""
    perm = _rng.stream(seed, _rng.CV).permutation(n)
    return np.array_split(perm, folds)


def cv_path_errors(X, y, grid, folds, options=None):
    """Pooled held-out squared error (divided by n) at each grid value.

    A fold's path is truncated once its training fit interpolates (training
    R^2 above ``CV_MAX_R2`` or at least as many nonzeros as training rows);
    the remaining grid values get infinite error.
    """
    options = options or DEFAULT_OPTIONS
    n, p = X.shape
    err = np.zeros(len(grid))
    for test in folds:
        train = np.setdiff1d(np.arange(n), test)
        Xt, yt = X[train], y[train]
        m = len(train)
        G = Xt.T @ Xt / m
        c = Xt.T @ yt / m
        yy = float(yt @ yt / m)
        beta = np.zeros(p)
        for i, lam in enumerate(grid):
            if lam == 0:
                beta = _least_squares(Xt, yt)
            else:
                _, _, ok = _cd_gram(G, c, yy, float(lam), beta, -1, options.max_iter,
                                    options.tol_change, options.tol_gap)
                if not ok:
                    warnings.warn(f"cv fit at lambda={lam:.4g} did not converge", RuntimeWarning)
            r = y[test] - X[test] @ beta
            err[i] += r @ r
            rt = yt - Xt @ beta
            if np.count_nonzero(beta) >= m or rt @ rt < (1 - CV_MAX_R2) * (yt @ yt):
                err[i + 1:] = np.inf
                break
    return err / n


def select_lambda_cv(X, y, folds=10, grid=None, seed=0, options=None):
    """K-fold cross-validated penalty.

    Observations are shuffled with the seeded CV stream and cut into
    ``folds`` contiguous blocks.  Returns the grid value with the smallest
    pooled held-out mean squared error; ties go to the larger penalty.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    y = check_response(y, n)
    if grid is None:
        grid = lambda_grid(X, y)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    if np.any(np.diff(grid) >= 0):
        raise ValueError("lambda grid must be strictly decreasing")
    if not 2 <= folds <= n:
        raise ValueError(f"folds must lie in [2, n={n}], got {folds}")
    split = cv_folds(n, folds, seed)
    small = [len(f) for f in split if len(f) < 2]
    if small:
        raise DegenerateFold(f"{folds} folds of {n} observations leave a fold of size {small[0]}")
    if grid.size == 1:
        return float(grid[0])
    err = cv_path_errors(X, y, grid, split, options)
    return float(grid[int(np.argmin(err))])
