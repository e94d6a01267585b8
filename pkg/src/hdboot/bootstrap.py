"""Bootstrap inference for the de-sparsified Lasso.

Schemes
-------
residual
    ``eps*`` drawn with replacement from the centered Lasso residuals.
wild
    ``eps*_i = W_i * eps_cent_i`` with i.i.d. mean-zero, unit-variance
    multipliers (Gaussian, Rademacher or Mammen's two-point law).
xyz
    Rows of the centered frame ``(X_hat, Y_hat, Z_hat)`` resampled jointly.
zc
    Wild multipliers applied to the linear part ``Z_j^T eps / Z_j^T X_j``
    only; the Lasso is not refitted.  Kept as a contrast to the full plug-in
    schemes.

Every replicate of the first three schemes refits the Lasso at the original
penalty and recomputes the de-sparsified estimate and its standard error on
the bootstrap sample.  Replicate ``b`` draws from its own random stream keyed
by ``(seed, b)``, so the draws matrix does not depend on the thread count.

Quantiles are type-7 (linear interpolation between order statistics at
position ``h = (B - 1) * nu + 1``), i.e. ``numpy.quantile(method="linear")``.
Empirical exceedance p-values are floored at ``1 / B``.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
from scipy.stats import norm

from . import rng as _rng
from .despars import DesparsResult, Studentization, _denominators, _mode, robust_se
from .errors import (
    DegenerateVariance,
    DimensionMismatch,
    NonConvergence,
    ReplicateFailure,
    SaturatedFit,
)
from .lasso import DEFAULT_OPTIONS, _cd_gram


class Scheme(str, Enum):
    RESIDUAL = "residual"
    WILD = "wild"
    XYZ = "xyz"
    ZC = "zc"


class Multiplier(str, Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"
    MAMMEN = "mammen"


class Center(str, Enum):
    AT_ESTIMATE = "estimate"
    COMPLETE_NULL = "null"


_SQRT5 = math.sqrt(5.0)
MAMMEN_LOW = (1 - _SQRT5) / 2
MAMMEN_HIGH = (1 + _SQRT5) / 2
MAMMEN_P_LOW = (_SQRT5 + 1) / (2 * _SQRT5)


@dataclass(frozen=True)
class BootstrapSpec:
    scheme: Scheme = Scheme.WILD
    multiplier: Multiplier = Multiplier.GAUSSIAN
    B: int = 1000
    studentization: Studentization = Studentization.ROBUST
    center: Center = Center.AT_ESTIMATE
    seed: int = 0
    sigma_denominator: str = "n_minus_s"
    omega_denominator: str = "n_minus_s"
    max_failure_rate: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "multiplier", Multiplier(self.multiplier))
        object.__setattr__(self, "studentization", _mode(self.studentization))
        object.__setattr__(self, "center", Center(self.center))
        if int(self.B) < 1:
            raise ValueError(f"B must be positive, got {self.B}")
        if self.B < 100:
            warnings.warn(f"B = {self.B} < 100 bootstrap replicates", UserWarning, stacklevel=3)

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return BootstrapSpec(**d)

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, Enum):
                d[k] = v.value
        return d


def draw_residual(rng, eps_cent):
    """``n`` i.i.d. draws with replacement from ``eps_cent``."""
    n = eps_cent.shape[0]
    return eps_cent[rng.integers(0, n, size=n)]


def draw_multipliers(rng, n, multiplier):
    multiplier = Multiplier(multiplier)
    if multiplier is Multiplier.GAUSSIAN:
        return rng.standard_normal(n)
    if multiplier is Multiplier.RADEMACHER:
        return 2.0 * rng.integers(0, 2, size=n) - 1.0
    return np.where(rng.random(n) < MAMMEN_P_LOW, MAMMEN_LOW, MAMMEN_HIGH)


def draw_wild(rng, eps_cent, multiplier="gaussian"):
    """``W_i * eps_cent_i`` with i.i.d. multipliers of the given law."""
    return draw_multipliers(rng, eps_cent.shape[0], multiplier) * eps_cent


@dataclass(frozen=True)
class XYZFrame:
    X_hat: np.ndarray
    Y_hat: np.ndarray
    Z_hat: np.ndarray
    eps_cent: np.ndarray


def make_xyz_frame(X, proj, fit):
    """Center X and Z against the centered residuals for the paired bootstrap.

    Each column loses its projection on ``eps_cent`` so that resampled
    regressors are orthogonal to resampled errors in bootstrap expectation;
    ``Y_hat = X_hat beta + eps_cent``.
    """
    X = np.asarray(X, dtype=np.float64)
    e = fit.residuals - fit.residuals.mean()
    ee = float(e @ e)
    if ee == 0.0:
        raise DegenerateVariance("centered residuals are identically zero")
    Xh = X - np.outer(e, (X.T @ e) / ee)
    Zh = proj.Z - np.outer(e, (proj.Z.T @ e) / ee)
    Yh = Xh @ fit.beta + e
    scale = max(float(np.abs(X).max()), float(np.abs(proj.Z).max()), 1.0) * math.sqrt(ee)
    orth = max(float(np.abs(Xh.T @ e).max()), float(np.abs(Zh.T @ e).max()))
    if orth > 1e-8 * scale:
        raise DegenerateVariance(f"xyz centering lost orthogonality ({orth:.3g})")
    return XYZFrame(Xh, Yh, Zh, e)


@dataclass
class BootstrapDraws:
    """Bootstrapped studentized statistics, one row per successful replicate."""

    t_star: np.ndarray
    spec: BootstrapSpec
    targets: np.ndarray
    failures: int = 0
    failed_replicates: list = field(default_factory=list)

    @property
    def B(self):
        return self.t_star.shape[0]

    def positions(self, group):
        """Column positions of variable indices ``group`` (all when None)."""
        if group is None:
            return np.arange(self.targets.size)
        lookup = {int(t): k for k, t in enumerate(self.targets)}
        try:
            return np.array([lookup[int(j)] for j in group], dtype=np.int64)
        except KeyError as exc:
            raise IndexError(f"variable {exc.args[0]} not among the bootstrapped targets") from None

    def quantile(self, nu, column=None):
        x = self.t_star if column is None else self.t_star[:, column]
        return np.quantile(x, nu, axis=0, method="linear")

    def meta(self):
        return {
            "schema_version": 1,
            "spec": self.spec.to_dict(),
            "targets": self.targets.tolist(),
            "failures": self.failures,
            "failed_replicates": list(self.failed_replicates),
        }

    def to_npz(self, path):
        np.savez(path, t_star=self.t_star, targets=self.targets,
                 meta=np.array(json.dumps(self.meta())))

    @classmethod
    def from_npz(cls, path):
        with np.load(path, allow_pickle=False) as f:
            meta = json.loads(str(f["meta"]))
            return cls(f["t_star"].copy(), BootstrapSpec(**meta["spec"]), f["targets"].copy(),
                       meta["failures"], meta["failed_replicates"])

    def to_csv(self, path):
        """Write ``replicate,T_<j>...`` rows plus a ``<path>.meta.json`` sidecar."""
        header = "replicate," + ",".join(f"T_{int(j)}" for j in self.targets)
        ok = np.setdiff1d(np.arange(self.B + self.failures), self.failed_replicates)
        table = np.column_stack([ok, self.t_star])
        fmt = ["%d"] + ["%.17g"] * self.targets.size
        np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=fmt)
        with open(f"{path}.meta.json", "w") as fh:
            json.dump(self.meta(), fh, indent=2)

    @classmethod
    def from_csv(cls, path):
        with open(f"{path}.meta.json") as fh:
            meta = json.load(fh)
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(table[:, 1:], BootstrapSpec(**meta["spec"]),
                   np.asarray(meta["targets"], dtype=np.int64),
                   meta["failures"], meta["failed_replicates"])


class _Replicator:
    """Shared read-only state for bootstrap replicates."""

    def __init__(self, X, fit, proj, spec, targets, options):
        self.X = X
        self.n, self.p = X.shape
        self.fit = fit
        self.spec = spec
        self.options = options or DEFAULT_OPTIONS
        pos = {int(t): k for k, t in enumerate(proj.targets)}
        try:
            cols = np.array([pos[int(j)] for j in targets], dtype=np.int64)
        except KeyError as exc:
            raise IndexError(f"target {exc.args[0]} has no nodewise projection") from None
        self.targets = np.asarray(targets, dtype=np.int64)
        self.Z = np.ascontiguousarray(proj.Z[:, cols])
        self.zx = proj.zx_inner[cols]
        self.z2 = proj.z_norm2[cols]
        self.eps_cent = fit.residuals - fit.residuals.mean()
        if float(self.eps_cent @ self.eps_cent) == 0.0:
            raise DegenerateVariance("centered residuals are identically zero; T* is 0/0")
        self.null = spec.center is Center.COMPLETE_NULL
        self.centers = np.zeros(self.targets.size) if self.null else fit.beta[self.targets]
        self.xb = X @ fit.beta
        self.gram = X.T @ X / self.n
        if spec.scheme is Scheme.XYZ:
            self.frame = make_xyz_frame(X, proj, fit)
            self.frame_Z = self.frame.Z_hat[:, cols]

    def _se(self, Z, zx, z2, resid, s_hat):
        sd, od = _denominators(self.n, s_hat, self.spec.sigma_denominator,
                               self.spec.omega_denominator)
        if self.spec.studentization is Studentization.ROBUST:
            se = robust_se(Z, zx, resid, od)
        else:
            se = math.sqrt(float(resid @ resid) / sd) * np.sqrt(z2) / np.abs(zx)
        if not np.all(se > 0):
            raise DegenerateVariance("bootstrap standard error is zero")
        return se

    def _refit(self, G, Xs, ys, warm):
        o = self.options
        beta = warm.copy()
        n_iter, gap, ok = _cd_gram(G, Xs.T @ ys / self.n, float(ys @ ys / self.n),
                                   self.fit.lam, beta, -1, o.max_iter, o.tol_change, o.tol_gap)
        if not ok:
            raise NonConvergence(f"bootstrap refit did not converge (gap {gap:.3g})", gap, n_iter)
        return beta

    def __call__(self, b):
        spec = self.spec
        rng = _rng.stream(spec.seed, _rng.BOOTSTRAP, b)
        n = self.n
        if spec.scheme is Scheme.XYZ:
            idx = rng.integers(0, n, size=n)
            F = self.frame
            Xs = np.ascontiguousarray(F.X_hat[idx])
            ys = F.eps_cent[idx] if self.null else F.Y_hat[idx]
            Zs = self.frame_Z[idx]
            G = Xs.T @ Xs / n
            if np.any(np.diag(G) <= 0):
                raise DegenerateVariance("resampled design has a zero column")
            warm = np.zeros(self.p) if self.null else np.array(self.fit.beta)
            beta = self._refit(G, Xs, ys, warm)
            resid = ys - Xs @ beta
            zx = np.einsum("ij,ij->j", Zs, Xs[:, self.targets])
            z2 = np.einsum("ij,ij->j", Zs, Zs)
            b_star = beta[self.targets] + (Zs.T @ resid) / zx
            se = self._se(Zs, zx, z2, resid, int(np.count_nonzero(beta)))
            return (b_star - self.centers) / se

        if spec.scheme is Scheme.RESIDUAL:
            eps = draw_residual(rng, self.eps_cent)
        else:
            eps = draw_wild(rng, self.eps_cent, spec.multiplier)

        if spec.scheme is Scheme.ZC:
            lin = (self.Z.T @ eps) / self.zx
            se = self._se(self.Z, self.zx, self.z2, eps, self.fit.s_hat)
            return lin / se

        ys = eps if self.null else self.xb + eps
        warm = np.zeros(self.p) if self.null else np.array(self.fit.beta)
        beta = self._refit(self.gram, self.X, ys, warm)
        resid = ys - self.X @ beta
        b_star = beta[self.targets] + (self.Z.T @ resid) / self.zx
        se = self._se(self.Z, self.zx, self.z2, resid, int(np.count_nonzero(beta)))
        return (b_star - self.centers) / se


def run_bootstrap(X, y, fit, proj, spec, targets=None, *, threads=1, options=None):
    """Draw ``spec.B`` bootstrapped studentized statistics.

    Parameters
    ----------
    X, y : design and response the fit and projection were computed from.
    fit : LassoFit
    proj : NodewiseProjection
        Cached nodewise residuals, reused by every replicate.
    spec : BootstrapSpec
    targets : sequence of int, optional
        Variables to bootstrap; defaults to ``proj.targets``.
    threads : int
        Worker threads.  The result is identical for every value.

    Raises
    ------
    DegenerateVariance
        If the centered residuals vanish.
    ReplicateFailure
        If more than ``spec.max_failure_rate`` of the replicates fail.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    n, p = X.shape
    if np.asarray(y).shape != (n,) or fit.beta.shape != (p,) or proj.Z.shape[0] != n:
        raise DimensionMismatch("bootstrap inputs disagree in shape")
    targets = proj.targets if targets is None else np.asarray(targets, dtype=np.int64)
    rep = _Replicator(X, fit, proj, spec, targets, options)

    def safe(b):
        try:
            return rep(b)
        except (NonConvergence, SaturatedFit, DegenerateVariance):
            return None

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(safe, range(spec.B)))
    else:
        rows = [safe(b) for b in range(spec.B)]

    failed = [b for b, r in enumerate(rows) if r is None]
    if len(failed) > spec.max_failure_rate * spec.B:
        raise ReplicateFailure(
            f"{len(failed)} of {spec.B} bootstrap replicates failed "
            f"(first failures: {failed[:5]})"
        )
    t_star = np.array([r for r in rows if r is not None]).reshape(-1, targets.size)
    return BootstrapDraws(t_star, spec, targets.copy(), len(failed), failed)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Intervals:
    targets: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    pvalues: np.ndarray | None = None


def _check_alpha(alpha, B):
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if 0 < alpha and B * min(alpha / 2, 1 - alpha / 2) < 5:
        warnings.warn(f"B = {B} is too small to estimate the {alpha / 2:g} quantile",
                      UserWarning, stacklevel=3)


def _matching(draws, res):
    pos = {int(t): k for k, t in enumerate(res.targets)}
    try:
        cols = np.array([pos[int(j)] for j in draws.targets], dtype=np.int64)
    except KeyError as exc:
        raise IndexError(f"target {exc.args[0]} missing from the de-sparsified result") from None
    return res.b_hat[cols], res.se(draws.spec.studentization)[cols]


def _dual_pvalues(t_star, t_obs):
    B = t_star.shape[0]
    out = np.empty(t_obs.size)
    grid = np.linspace(0.0, 1.0, B) if B > 1 else np.array([0.5])
    for k in range(t_obs.size):
        xs = np.sort(t_star[:, k])
        nu = float(np.interp(t_obs[k], xs, grid))
        out[k] = min(1.0, 2 * min(nu, 1 - nu))
    return np.maximum(out, 1.0 / B)


def individual_ci(draws, res, alpha=0.05):
    """Per-target bootstrap-t intervals and their dual p-values.

    ``[b_j - q_j(1 - alpha/2) se_j, b_j - q_j(alpha/2) se_j]``.  The p-value
    is the smallest alpha at which 0 leaves the interval, found by inverting
    the interpolated empirical quantile function.
    """
    if draws.spec.center is not Center.AT_ESTIMATE:
        raise ValueError("individual intervals need draws centered at the estimate")
    _check_alpha(alpha, draws.B)
    b, se = _matching(draws, res)
    if alpha == 0:
        lo, hi = np.full(b.size, -np.inf), np.full(b.size, np.inf)
    else:
        q_hi = draws.quantile(1 - alpha / 2)
        q_lo = draws.quantile(alpha / 2)
        lo, hi = b - q_hi * se, b - q_lo * se
    return Intervals(draws.targets, lo, hi, _dual_pvalues(draws.t_star, b / se))


def simultaneous_ci(draws, res, alpha=0.05, variant="minmax", group=None):
    """Simultaneous intervals over ``group`` (variable indices; all targets by default).

    ``minmax`` uses the ``1 - alpha/2`` quantile of the row maximum and the
    ``alpha/2`` quantile of the row minimum; ``abs`` uses the ``1 - alpha``
    quantile of the row maximum of ``|T*|`` symmetrically.
    """
    if draws.spec.center is not Center.AT_ESTIMATE:
        raise ValueError("simultaneous intervals need draws centered at the estimate")
    _check_alpha(alpha, draws.B)
    pos = draws.positions(group)
    b, se = _matching(draws, res)
    b, se = b[pos], se[pos]
    T = draws.t_star[:, pos]
    if alpha == 0:
        return Intervals(draws.targets[pos], np.full(b.size, -np.inf), np.full(b.size, np.inf))
    if variant == "minmax":
        q_max = np.quantile(T.max(axis=1), 1 - alpha / 2, method="linear")
        q_min = np.quantile(T.min(axis=1), alpha / 2, method="linear")
        return Intervals(draws.targets[pos], b - q_max * se, b - q_min * se)
    if variant == "abs":
        q = np.quantile(np.abs(T).max(axis=1), 1 - alpha, method="linear")
        return Intervals(draws.targets[pos], b - q * se, b + q * se)
    raise ValueError(f"unknown simultaneous variant {variant!r}")


def _require_null(draws):
    if draws.spec.center is not Center.COMPLETE_NULL:
        raise ValueError("draws must be generated under the complete null")


def group_pvalue(draws_null, observed_t, group=None):
    """Max-|T| group test p-value calibrated on complete-null draws.

    ``observed_t`` is aligned with ``draws_null.targets``; ``group`` holds
    variable indices (all targets by default).
    """
    _require_null(draws_null)
    pos = draws_null.positions(group)
    t = np.asarray(observed_t, dtype=np.float64)
    if t.shape != (draws_null.targets.size,):
        raise DimensionMismatch("observed_t must align with the draws targets")
    m_obs = np.abs(t[pos]).max()
    m_star = np.abs(draws_null.t_star[:, pos]).max(axis=1)
    B = draws_null.B
    return max(np.count_nonzero(m_star > m_obs) / B, 1.0 / B)


@dataclass(frozen=True)
class WestfallYoung:
    adjusted: np.ndarray
    unadjusted: np.ndarray
    t_rej: float
    alpha: float

    def rejected(self):
        return self.adjusted <= self.alpha


def westfall_young(draws_null, observed_t, alpha=0.05):
    """Single-step max-|T| adjusted p-values and rejection threshold.

    Returns adjusted p-values ``P(max_k |T*0_k| > |t_j|)``, the matching
    unadjusted per-coordinate exceedance p-values, and ``t_rej``, the
    ``1 - alpha`` quantile of ``max_k |T*0_k|``.
    """
    _require_null(draws_null)
    t = np.abs(np.asarray(observed_t, dtype=np.float64))
    T = np.abs(draws_null.t_star)
    if t.shape != (T.shape[1],):
        raise DimensionMismatch("observed_t must align with the draws targets")
    B = T.shape[0]
    m_sorted = np.sort(T.max(axis=1))
    # count of replicate maxima strictly above each |t_j|
    exceed = B - np.searchsorted(m_sorted, t, side="right")
    adjusted = np.maximum(exceed / B, 1.0 / B)
    unadjusted = np.maximum((T > t).sum(axis=0) / B, 1.0 / B)
    t_rej = float(np.quantile(m_sorted, 1 - alpha, method="linear"))
    return WestfallYoung(adjusted, unadjusted, t_rej, alpha)


def holm_adjust(pvalues):
    """Step-down Holm adjustment, monotone and capped at 1."""
    p = np.asarray(pvalues, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    adj = np.minimum(1.0, np.maximum.accumulate((m - np.arange(m)) * p[order]))
    out = np.empty(m)
    out[order] = adj
    return out


def equivalent_tests(t_rej, alpha=0.05):
    """Bonferroni-equivalent number of tests ``alpha / (2 (1 - Phi(t_rej)))``.

    Returns ``inf`` (with a RuntimeWarning) when the normal tail underflows.
    """
    if t_rej < 0:
        raise ValueError("t_rej must be >= 0")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    tail = norm.sf(t_rej)
    if tail == 0.0:
        warnings.warn(f"normal tail underflows at t_rej={t_rej}", RuntimeWarning, stacklevel=2)
        return math.inf
    return float(alpha / (2 * tail))


# ---------------------------------------------------------------------------
# end-to-end
# ---------------------------------------------------------------------------


@dataclass
class InferenceOutput:
    targets: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    pvalues: np.ndarray
    sim_lower: np.ndarray | None = None
    sim_upper: np.ndarray | None = None
    group: list | None = None
    group_pvalue: float | None = None
    wy_adjusted: np.ndarray | None = None
    t_rej: float | None = None
    p_equiv: float | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        d = {}
        for k, v in self.__dict__.items():
            d[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return d

    def table(self):
        """Rows of per-target results for CSV output."""
        cols = ["targets", "estimate", "se", "ci_lower", "ci_upper", "pvalues",
                "sim_lower", "sim_upper", "wy_adjusted"]
        present = [c for c in cols if getattr(self, c) is not None]
        rows = []
        if self.sim_lower is not None:
            sim = {int(j): k for k, j in enumerate(self.group)}
        for k in range(self.targets.size):
            row = {}
            for c in present:
                if c in ("sim_lower", "sim_upper"):
                    kk = sim.get(int(self.targets[k]))
                    row[c] = getattr(self, c)[kk] if kk is not None else ""
                else:
                    row[c] = getattr(self, c)[k]
            rows.append(row)
        return present, rows


def bootstrap_inference(X, y, fit, proj, res, spec, alpha=0.05, *, group=None,
                        simultaneous=None, wy=False, threads=1, options=None):
    """Individual, simultaneous and multiplicity-adjusted bootstrap inference."""
    draws = run_bootstrap(X, y, fit, proj, spec.replace(center=Center.AT_ESTIMATE),
                          threads=threads, options=options)
    ci = individual_ci(draws, res, alpha)
    b, se = _matching(draws, res)
    out = InferenceOutput(draws.targets, b, se, ci.lower, ci.upper, ci.pvalues,
                          meta={"spec": spec.to_dict(), "failures": draws.failures})
    grp = list(draws.targets.tolist()) if group is None else [int(j) for j in group]
    if simultaneous:
        sim = simultaneous_ci(draws, res, alpha, simultaneous, grp)
        out.sim_lower, out.sim_upper, out.group = sim.lower, sim.upper, grp
    if wy or group is not None:
        null = run_bootstrap(X, y, fit, proj, spec.replace(center=Center.COMPLETE_NULL),
                             threads=threads, options=options)
        t_obs = b / se
        out.group = grp
        out.group_pvalue = group_pvalue(null, t_obs, grp)
        if wy:
            w = westfall_young(null, t_obs, alpha)
            out.wy_adjusted, out.t_rej = w.adjusted, w.t_rej
            out.p_equiv = equivalent_tests(w.t_rej, alpha)
        out.meta["null_failures"] = null.failures
    return out
