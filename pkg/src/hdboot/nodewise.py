"""Nodewise Lasso: regularized residuals of each column on the others."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProjection, NonConvergence
from .lasso import DEFAULT_OPTIONS, _cd_gram, _least_squares, check_design, select_lambda_cv


@dataclass(frozen=True)
class NodewiseProjection:
    """Residual directions ``Z_j = X_j - X_{-j} gamma_j`` for the targets.

    ``gamma`` is stored as a ``(len(targets), p)`` array with a structural
    zero in column ``j`` of row ``j``, so ``Z = X - X @ gamma.T`` restricted
    to target columns.
    """

    lambda_x: float
    targets: np.ndarray
    Z: np.ndarray
    gamma: np.ndarray
    zx_inner: np.ndarray
    z_norm2: np.ndarray
    lambda_x_per_target: np.ndarray | None = None

    def __post_init__(self):
        for a in (self.targets, self.Z, self.gamma, self.zx_inner, self.z_norm2):
            a.setflags(write=False)

    def gamma_minus_j(self, k):
        """``gamma_j`` of target position ``k`` as a length ``p - 1`` vector."""
        j = int(self.targets[k])
        return np.delete(self.gamma[k], j)


def default_lambda_x(n, p, c=1.0):
    """``c * sqrt(log(p) / n)``."""
    if n < 2 or p < 2:
        raise ValueError(f"default lambda_x needs n >= 2 and p >= 2, got n={n}, p={p}")
    logp = math.log(p)
    if not math.isfinite(logp):
        raise OverflowError(f"log(p) is not finite for p={p}")
    return c * math.sqrt(logp / n)


def _one_target(X, G, j, lam, options):
    n, p = X.shape
    gamma = np.zeros(p)
    if p > 1:
        if lam == 0:
            others = np.delete(np.arange(p), j)
            gamma[others] = _least_squares(X[:, others], X[:, j])
        else:
            n_iter, gap, ok = _cd_gram(
                G, np.ascontiguousarray(G[:, j]), float(G[j, j]), float(lam), gamma, j,
                options.max_iter, options.tol_change, options.tol_gap,
            )
            if not ok:
                raise NonConvergence(
                    f"nodewise regression for column {j} did not converge (gap {gap:.3g})",
                    gap, n_iter,
                )
    gamma[j] = 0.0
    z = X[:, j] - X @ gamma
    # per-column dot products keep the result independent of the target set
    return gamma, z, float(z @ X[:, j]), float(z @ z), float(X[:, j] @ X[:, j])


def nodewise_residuals(X, lambda_x=None, targets=None, options=None, *, gram=None,
                       threads=1, cv_per_column=False, cv_seed=0):
    """Run the nodewise Lasso for each target column at a shared ``lambda_x``.

    Parameters
    ----------
    X : (n, p) array
    lambda_x : float, optional
        Shared penalty; defaults to :func:`default_lambda_x`.
    targets : sequence of int, optional
        Columns to project; all by default.  A target's result does not
        depend on which other targets are requested.
    cv_per_column : bool
        Select a separate penalty per column by cross-validation instead.
    threads : int
        Worker threads for the independent per-column regressions.

    Raises
    ------
    DegenerateProjection
        If some ``Z_j^T X_j`` vanishes.
    """
    options = options or DEFAULT_OPTIONS
    X = check_design(X)
    n, p = X.shape
    targets = np.arange(p) if targets is None else np.asarray(targets, dtype=np.int64)
    if targets.size == 0:
        raise ValueError("targets must be nonempty")
    if targets.min() < 0 or targets.max() >= p:
        raise IndexError(f"targets out of range for p={p}")
    if lambda_x is None:
        lambda_x = default_lambda_x(n, p) if p >= 2 else 0.0
    if lambda_x < 0:
        raise ValueError("lambda_x must be >= 0")
    G = X.T @ X / n if gram is None else gram

    if cv_per_column:
        lams = []
        for j in targets:
            others = np.delete(np.arange(p), j)
            lams.append(select_lambda_cv(X[:, others], X[:, j], folds=min(10, n), seed=cv_seed,
                                         options=options) if p > 1 else 0.0)
        lams = np.asarray(lams)
    else:
        lams = np.full(targets.size, float(lambda_x))

    def work(k):
        return _one_target(X, G, int(targets[k]), float(lams[k]), options)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            out = list(ex.map(work, range(targets.size)))
    else:
        out = [work(k) for k in range(targets.size)]

    gamma = np.array([o[0] for o in out]).reshape(targets.size, p)
    Z = np.column_stack([o[1] for o in out])
    zx = np.array([o[2] for o in out])
    z2 = np.array([o[3] for o in out])
    scale = np.array([o[4] for o in out])
    bad = np.flatnonzero(np.abs(zx) <= 1e-12 * scale)
    if bad.size:
        raise DegenerateProjection(
            f"Z_j^T X_j vanishes for column(s) {targets[bad].tolist()} at lambda_x={lambda_x}"
        )
    if np.any(zx < 0):
        warnings.warn(f"negative Z_j^T X_j for columns {targets[zx < 0].tolist()}", RuntimeWarning)
    return NodewiseProjection(
        lambda_x=float(lambda_x),
        targets=targets.copy(),
        Z=np.ascontiguousarray(Z),
        gamma=gamma,
        zx_inner=zx,
        z_norm2=z2,
        lambda_x_per_target=lams if cv_per_column else None,
    )
