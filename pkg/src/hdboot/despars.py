"""De-sparsified Lasso estimates, standard errors and studentized statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import norm

from .errors import DegenerateVariance, DimensionMismatch, SaturatedFit
from .lasso import LassoFit
from .nodewise import NodewiseProjection


class Studentization(str, Enum):
    PLAIN = "plain"
    ROBUST = "robust"


def _mode(mode):
    return Studentization(mode.value if isinstance(mode, Studentization) else str(mode).lower())


def one_step(Z, zx, beta_t, resid):
    """``beta_j + Z_j^T resid / Z_j^T X_j`` for every column of ``Z``."""
    return beta_t + (Z.T @ resid) / zx


def plain_se(z_norm2, zx, sigma):
    # n^{-1/2} (sigma ||Z_j|| / sqrt(n)) / |Z_j^T X_j / n|
    return sigma * np.sqrt(z_norm2) / np.abs(zx)


def robust_se(Z, zx, resid, denom):
    """Heteroscedasticity-robust standard error with ``omega_j^2 = SS / denom``."""
    n = Z.shape[0]
    u = Z * resid[:, None]
    u -= u.mean(axis=0)
    omega = np.sqrt(np.einsum("ij,ij->j", u, u) / denom)
    # n^{-1/2} omega_j / |Z_j^T X_j / n|
    return math.sqrt(n) * omega / np.abs(zx)


def _denominators(n, s_hat, sigma_denominator, omega_denominator):
    if s_hat >= n and "n_minus_s" in (sigma_denominator, omega_denominator):
        raise SaturatedFit(f"s_hat = {s_hat} >= n = {n}")
    sd = n if sigma_denominator == "n" else n - s_hat
    od = n if omega_denominator == "n" else n - s_hat
    return sd, od


@dataclass(frozen=True)
class DesparsResult:
    """Per-target de-sparsified estimates.

    ``t_stats`` are studentized at null value 0 with ``studentization``.
    """

    targets: np.ndarray
    b_hat: np.ndarray
    se_plain: np.ndarray
    se_robust: np.ndarray
    studentization: Studentization
    fit: LassoFit
    proj: NodewiseProjection
    sigma_denominator: str = "n_minus_s"
    omega_denominator: str = "n_minus_s"

    def se(self, mode=None):
        mode = self.studentization if mode is None else _mode(mode)
        return self.se_robust if mode is Studentization.ROBUST else self.se_plain

    @property
    def t_stats(self):
        return studentize(self, np.zeros(self.b_hat.size), self.studentization)

    def to_dict(self):
        return {
            "targets": self.targets.tolist(),
            "b_hat": self.b_hat.tolist(),
            "se_plain": self.se_plain.tolist(),
            "se_robust": self.se_robust.tolist(),
            "studentization": self.studentization.value,
            "sigma_denominator": self.sigma_denominator,
            "omega_denominator": self.omega_denominator,
        }


def desparsify(X, y, fit, proj, studentization="robust", *,
               sigma_denominator="n_minus_s", omega_denominator="n_minus_s"):
    """Assemble the de-sparsified Lasso for the targets of ``proj``.

    ``b_j = beta_j + Z_j^T (y - X beta) / Z_j^T X_j`` with both the plain
    (noise-level based) and robust (sandwich-type) standard errors.

    Raises
    ------
    SaturatedFit
        If the Lasso has at least n nonzero coefficients.
    DegenerateVariance
        If the residuals are identically zero.
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if fit.beta.shape[0] != p or proj.Z.shape[0] != n or np.asarray(y).shape != (n,):
        raise DimensionMismatch("fit, projection and data disagree in shape")
    sd, od = _denominators(n, fit.s_hat, sigma_denominator, omega_denominator)
    resid = fit.residuals
    rss = float(resid @ resid)
    y = np.asarray(y, dtype=np.float64)
    if rss == 0.0 or rss <= 1e-24 * float(y @ y):
        raise DegenerateVariance("residuals are identically zero; standard errors vanish")
    t = proj.targets
    b = one_step(proj.Z, proj.zx_inner, fit.beta[t], resid)
    sp = plain_se(proj.z_norm2, proj.zx_inner, math.sqrt(rss / sd))
    sr = robust_se(proj.Z, proj.zx_inner, resid, od)
    if np.any(sr <= 0) or np.any(sp <= 0):
        raise DegenerateVariance("a standard error is zero")
    return DesparsResult(
        targets=t, b_hat=b, se_plain=sp, se_robust=sr,
        studentization=_mode(studentization), fit=fit, proj=proj,
        sigma_denominator=sigma_denominator, omega_denominator=omega_denominator,
    )


def studentize(res, null_values=None, mode=None):
    """``(b_j - null_j) / se_j`` under the requested standard error."""
    null = np.zeros(res.b_hat.size) if null_values is None else np.asarray(null_values, float)
    if null.shape != res.b_hat.shape:
        raise DimensionMismatch("null_values must match the number of targets")
    se = res.se(mode)
    if np.any(se <= 0):
        raise DegenerateVariance("zero standard error")
    return (res.b_hat - null) / se


@dataclass(frozen=True)
class NormalInference:
    lower: np.ndarray
    upper: np.ndarray
    pvalues: np.ndarray
    t_stats: np.ndarray


def normal_approx_inference(res, alpha=0.05, mode=None):
    """Confidence intervals and two-sided p-values from the N(0, 1) limit.

    ``alpha = 0`` returns the whole real line.
    """
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    se = res.se(mode)
    t = studentize(res, None, mode)
    z = norm.isf(alpha / 2) if alpha > 0 else np.inf
    half = z * se
    pv = 2 * norm.sf(np.abs(t))
    return NormalInference(res.b_hat - half, res.b_hat + half, pv, t)
