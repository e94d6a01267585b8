"""Simulation harness: data generators and coverage / FWER experiments.

Every random quantity comes from a stream keyed by one of the scenario seeds
(design, signal, replication base) and, for replications, the replication
index.  Given the same configuration an experiment is bit-identical no
matter how many worker threads run it.
"""

from __future__ import annotations

import csv
import json
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import __version__
from . import rng as _rng
from .bootstrap import (
    BootstrapSpec,
    Center,
    equivalent_tests,
    holm_adjust,
    individual_ci,
    run_bootstrap,
    westfall_young,
)
from .despars import desparsify, normal_approx_inference
from .errors import ConfigError, HDBootError, UsageError
from .lasso import fit_lasso, lambda_grid, select_lambda_cv
from .nodewise import default_lambda_x, nodewise_residuals

SIGNALS = ("U(0,2)", "U(0,4)", "U(-2,2)", "Fixed(1)", "Fixed(2)", "Fixed(10)", "None")
ERRORS = ("gauss", "chi2", "hetero_mammen")
# E[Z^2] for Z ~ U(1, 3)
HETERO_EZ2 = 13.0 / 3.0


@dataclass
class ScenarioConfig:
    """Data-generating scenario.

    ``design`` is ``toeplitz`` (Sigma_jk = rho^|j-k|), ``identity`` or
    ``csv`` (columns of ``design_csv``).  ``errors`` is ``gauss``, ``chi2``
    (centered chi-square with one degree of freedom, unit variance) or
    ``hetero_mammen`` (rows of X rescaled, heteroscedastic mixture errors,
    no signal).
    """

    name: str = "scenario"
    design: str = "toeplitz"
    rho: float = 0.9
    design_csv: str = ""
    n: int = 100
    p: int = 500
    signal: str = "U(-2,2)"
    s0: int = 3
    errors: str = "gauss"
    sigma: float = 1.0
    R: int = 100
    design_seed: int = 1
    signal_seed: int = 2
    replication_seed: int = 3

    def __post_init__(self):
        if self.design not in ("toeplitz", "identity", "csv"):
            raise ConfigError(f"unknown design {self.design!r}")
        if self.errors not in ERRORS:
            raise ConfigError(f"unknown errors {self.errors!r}")
        parse_signal(self.signal)
        if self.R < 1:
            raise UsageError(f"R must be >= 1, got {self.R}")
        if self.design != "csv" and (self.n < 2 or self.p < 1):
            raise ConfigError("need n >= 2 and p >= 1")
        if self.design != "csv" and self.s0 > self.p:
            raise ConfigError(f"s0 = {self.s0} exceeds p = {self.p}")
        if self.errors == "hetero_mammen" and self.signal != "None":
            raise ConfigError("hetero_mammen errors require signal None")


@dataclass
class MethodConfig:
    """Inference method run in each replication."""

    scheme: str = "residual"
    multiplier: str = "gaussian"
    B: int = 500
    studentization: str = "plain"
    lam: float | None = None
    cv_folds: int = 10
    grid_size: int = 50
    grid_ratio: float = 0.01
    lambda_x: float | None = None
    lambda_x_const: float = 1.0
    standardize: bool = False
    sigma_denominator: str = "n_minus_s"
    omega_denominator: str = "n_minus_s"

    def spec(self, seed, center="estimate"):
        return BootstrapSpec(
            scheme=self.scheme, multiplier=self.multiplier, B=self.B,
            studentization=self.studentization, center=center, seed=seed,
            sigma_denominator=self.sigma_denominator, omega_denominator=self.omega_denominator,
        )


def parse_signal(signal):
    """Return ``("uniform", lo, hi)``, ``("fixed", c)`` or ``("none",)``."""
    s = signal.replace(" ", "")
    if s.lower() == "none":
        return ("none",)
    m = re.fullmatch(r"U\((-?[\d.]+),(-?[\d.]+)\)", s)
    if m:
        return ("uniform", float(m.group(1)), float(m.group(2)))
    m = re.fullmatch(r"Fixed\((-?[\d.]+)\)", s)
    if m:
        return ("fixed", float(m.group(1)))
    raise ConfigError(f"unknown signal {signal!r}; expected one of {', '.join(SIGNALS)}")


def load_csv_matrix(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    try:
        return np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ConfigError(f"non-numeric entry in design file {path}: {exc}") from None


def gen_design(cfg):
    """Fixed design for the scenario.

    Toeplitz rows follow the AR(1) recursion ``x_1 = e_1``,
    ``x_j = rho x_{j-1} + sqrt(1 - rho^2) e_j``, which has covariance
    ``rho^|j-k|`` exactly.  For ``hetero_mammen`` errors each row is then
    multiplied by ``U_i / 2`` with ``U_i ~ U(1, 3)``.
    """
    if cfg.design == "csv":
        X = load_csv_matrix(cfg.design_csv)
    else:
        g = _rng.stream(cfg.design_seed, _rng.DESIGN)
        e = g.standard_normal((cfg.n, cfg.p))
        if cfg.design == "identity":
            X = e
        else:
            X = np.empty_like(e)
            X[:, 0] = e[:, 0]
            w = math.sqrt(1.0 - cfg.rho**2)
            for j in range(1, cfg.p):
                X[:, j] = cfg.rho * X[:, j - 1] + w * e[:, j]
        if cfg.errors == "hetero_mammen":
            X = X * (g.uniform(1.0, 3.0, size=cfg.n) / 2.0)[:, None]
    return np.ascontiguousarray(X)


def gen_signal(cfg, p=None):
    """``s0`` nonzero coefficients at seeded random positions."""
    p = cfg.p if p is None else p
    kind = parse_signal(cfg.signal)
    beta = np.zeros(p)
    if kind[0] == "none" or cfg.s0 == 0:
        return beta
    g = _rng.stream(cfg.signal_seed, _rng.SIGNAL)
    if kind[0] == "uniform":
        vals = g.uniform(kind[1], kind[2], size=cfg.s0)
    else:
        vals = np.full(cfg.s0, kind[1])
    beta[: cfg.s0] = vals
    return beta[g.permutation(p)]


def gen_errors(cfg, X, rng):
    """Additive noise vector for one replication.

    ``hetero_mammen`` returns ``Q_i eps_i + eps_i`` with the normal mixture
    ``eps_i = l_i zeta_i + (l_i - 1) eta_i`` and
    ``Q_i = sum_{k<5} X_ik^2 - 13/3``; note that this mixture has mean 1/2.
    """
    n = X.shape[0]
    if cfg.errors == "gauss":
        return cfg.sigma * rng.standard_normal(n)
    if cfg.errors == "chi2":
        return cfg.sigma * (rng.chisquare(1.0, size=n) - 1.0) / math.sqrt(2.0)
    if X.shape[1] < 5:
        raise ConfigError("hetero_mammen errors need p >= 5")
    l = (rng.random(n) < 0.5).astype(np.float64)
    zeta = rng.normal(0.5, 1.2, size=n)
    eta = rng.normal(-0.5, 0.7, size=n)
    eps = l * zeta + (l - 1.0) * eta
    q = (X[:, :5] ** 2).sum(axis=1) - HETERO_EZ2
    return q * eps + eps


def inject_signal(X, y, j, c):
    """``y + X_j * c`` (``j`` is a 0-based column index)."""
    X = np.asarray(X)
    if not 0 <= j < X.shape[1]:
        raise IndexError(f"column {j} out of range for p={X.shape[1]}")
    return np.asarray(y, dtype=np.float64) + X[:, j] * c


@dataclass
class ExperimentResult:
    scenario: ScenarioConfig
    method: MethodConfig
    kind: str
    alpha: float
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    coverage: dict = field(default_factory=dict)
    fwer: dict = field(default_factory=dict)
    power: dict = field(default_factory=dict)
    p_equiv: np.ndarray | None = None
    t_rej: np.ndarray | None = None
    failures: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    seconds: float = 0.0

    def write(self, outdir, stem=None):
        """Write ``<stem>.csv`` (long format) and ``<stem>.json`` under ``outdir``."""
        import os

        os.makedirs(outdir, exist_ok=True)
        stem = stem or f"{self.scenario.name}_{self.kind}"
        csv_path = os.path.join(outdir, f"{stem}.csv")
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "replication", "coefficient", "metric", "value"])
            for rep, coef, metric, value in self.records:
                w.writerow([self.scenario.name, rep, coef, metric, _fmt(value)])
        json_path = os.path.join(outdir, f"{stem}.json")
        with open(json_path, "w") as fh:
            json.dump(self.summary, fh, indent=2, sort_keys=True, default=_jsonable)
        return csv_path, json_path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(type(v))


class _Experiment:
    """Fixed design, signal and nodewise projection shared by all replications."""

    def __init__(self, cfg, method):
        self.cfg = cfg
        self.method = method
        X = gen_design(cfg)
        if method.standardize:
            X = (X - X.mean(axis=0)) / X.std(axis=0)
        self.X = np.ascontiguousarray(X)
        n, p = self.X.shape
        self.beta0 = gen_signal(cfg, p)
        self.lambda_x = (method.lambda_x if method.lambda_x is not None
                         else default_lambda_x(n, p, method.lambda_x_const))
        self.proj = nodewise_residuals(self.X, self.lambda_x)
        self.gram = self.X.T @ self.X / n

    def data(self, r):
        g = _rng.stream(self.cfg.replication_seed, _rng.REPLICATION, r)
        return self.X @ self.beta0 + gen_errors(self.cfg, self.X, g)

    def fit(self, r, y):
        m = self.method
        if m.lam is not None:
            lam = m.lam
        else:
            grid = lambda_grid(self.X, y, m.grid_size, m.grid_ratio)
            cv_seed = _rng.derive_seed(self.cfg.replication_seed, _rng.REPLICATION, r, _rng.CV)
            lam = select_lambda_cv(self.X, y, m.cv_folds, grid, cv_seed)
        return fit_lasso(self.X, y, lam, gram=self.gram)

    def boot_seed(self, r):
        return _rng.derive_seed(self.cfg.replication_seed, _rng.REPLICATION, r, _rng.BOOTSTRAP)

    def meta(self):
        return {
            "scenario": asdict(self.cfg),
            "method": asdict(self.method),
            "lambda_x": self.lambda_x,
            "n": self.X.shape[0],
            "p": self.X.shape[1],
            "beta0": self.beta0.tolist(),
            "version": __version__,
        }


def _map(fn, R, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, range(R)))
    return [fn(r) for r in range(R)]


def _guarded(fn):
    def run(r):
        try:
            return fn(r)
        except HDBootError as exc:
            return exc
    return run


def run_coverage(cfg, method, alpha=0.05, threads=1):
    """Per-coefficient coverage of bootstrap and normal-approximation intervals.

    Each replication draws new errors on the fixed design, tunes the Lasso,
    and records whether the bootstrap interval and the two normal-limit
    baselines (plain and robust standard error) cover each true coefficient.
    """
    t0 = time.perf_counter()
    ex = _Experiment(cfg, method)
    methods = ("bootstrap", "normal_plain", "normal_robust")

    def one(r):
        y = ex.data(r)
        fit = ex.fit(r, y)
        res = desparsify(ex.X, y, fit, ex.proj, method.studentization,
                         sigma_denominator=method.sigma_denominator,
                         omega_denominator=method.omega_denominator)
        draws = run_bootstrap(ex.X, y, fit, ex.proj, method.spec(ex.boot_seed(r)))
        cis = {"bootstrap": individual_ci(draws, res, alpha)}
        for mode in ("plain", "robust"):
            cis[f"normal_{mode}"] = normal_approx_inference(res, alpha, mode)
        out = {"lambda": fit.lam, "s_hat": fit.s_hat, "boot_failures": draws.failures}
        for name, ci in cis.items():
            out[name] = (ci.lower, ci.upper)
        return out

    outs = _map(_guarded(one), cfg.R, threads)
    result = ExperimentResult(cfg, method, "coverage", alpha)
    hits = {m: [] for m in methods}
    for r, o in enumerate(outs):
        if isinstance(o, Exception):
            result.failures.append((r, o.code, str(o)))
            result.records.append((r, "", "failure", o.code))
            continue
        result.records.append((r, "", "lambda", o["lambda"]))
        result.records.append((r, "", "s_hat", o["s_hat"]))
        for m in methods:
            lo, hi = o[m]
            h = (lo <= ex.beta0) & (ex.beta0 <= hi)
            hits[m].append(h)
            for j in range(h.size):
                result.records.append((r, j, f"lower_{m}", lo[j]))
                result.records.append((r, j, f"upper_{m}", hi[j]))
                result.records.append((r, j, f"hit_{m}", int(h[j])))
    ok = cfg.R - len(result.failures)
    summary = {"kind": "coverage", "alpha": alpha, "replications": cfg.R,
               "failed_replications": len(result.failures)}
    for m in methods:
        cov = np.mean(hits[m], axis=0) if ok else np.full(ex.X.shape[1], np.nan)
        result.coverage[m] = cov
        summary[f"mean_coverage_{m}"] = float(np.mean(cov))
        summary[f"coverage_{m}"] = cov
    result.summary = summary
    result.meta = ex.meta()
    summary["meta"] = result.meta
    result.seconds = time.perf_counter() - t0
    return result


def run_fwer_power(cfg, method, alpha=0.05, threads=1):
    """Familywise error and power of Westfall-Young and Holm rejections.

    Westfall-Young uses complete-null bootstrap draws; Holm adjusts the
    normal-approximation p-values with the same studentization.  Each
    replication also yields ``t_rej`` and its Bonferroni-equivalent number
    of tests.
    """
    t0 = time.perf_counter()
    ex = _Experiment(cfg, method)
    support = ex.beta0 != 0
    s0 = int(support.sum())

    def one(r):
        y = ex.data(r)
        fit = ex.fit(r, y)
        res = desparsify(ex.X, y, fit, ex.proj, method.studentization,
                         sigma_denominator=method.sigma_denominator,
                         omega_denominator=method.omega_denominator)
        null = run_bootstrap(ex.X, y, fit, ex.proj, method.spec(ex.boot_seed(r), "null"))
        t = res.t_stats
        wy = westfall_young(null, t, alpha)
        holm = holm_adjust(normal_approx_inference(res, alpha).pvalues)
        pe = equivalent_tests(wy.t_rej, alpha) if alpha > 0 else math.nan
        return {"lambda": fit.lam, "wy": wy.adjusted, "holm": holm, "t_rej": wy.t_rej,
                "p_equiv": pe}

    outs = _map(_guarded(one), cfg.R, threads)
    result = ExperimentResult(cfg, method, "fwer", alpha)
    false_rej = {"wy": [], "holm": []}
    power = {"wy": [], "holm": []}
    t_rej, p_eq = [], []
    for r, o in enumerate(outs):
        if isinstance(o, Exception):
            result.failures.append((r, o.code, str(o)))
            result.records.append((r, "", "failure", o.code))
            continue
        result.records.append((r, "", "lambda", o["lambda"]))
        result.records.append((r, "", "t_rej", o["t_rej"]))
        result.records.append((r, "", "p_equiv", o["p_equiv"]))
        t_rej.append(o["t_rej"])
        p_eq.append(o["p_equiv"])
        for m in ("wy", "holm"):
            rej = o[m] <= alpha
            false_rej[m].append(bool(np.any(rej & ~support)))
            if s0:
                power[m].append(np.count_nonzero(rej & support) / s0)
            for j in range(rej.size):
                result.records.append((r, j, f"padj_{m}", o[m][j]))
    summary = {"kind": "fwer", "alpha": alpha, "replications": cfg.R,
               "failed_replications": len(result.failures), "s0": s0}
    for m in ("wy", "holm"):
        result.fwer[m] = float(np.mean(false_rej[m])) if false_rej[m] else math.nan
        result.power[m] = float(np.mean(power[m])) if power[m] else None
        summary[f"fwer_{m}"] = result.fwer[m]
        summary[f"power_{m}"] = result.power[m]
    result.t_rej = np.asarray(t_rej)
    result.p_equiv = np.asarray(p_eq)
    summary["t_rej"] = result.t_rej
    summary["p_equiv"] = result.p_equiv
    summary["median_p_equiv"] = float(np.median(p_eq)) if p_eq else math.nan
    result.summary = summary
    result.meta = ex.meta()
    summary["meta"] = result.meta
    result.seconds = time.perf_counter() - t0
    return result


def run_q95(cfg, methods, level=0.95, threads=1):
    """Bootstrap estimates of the ``level`` quantile of ``max_j |T_j|`` under the complete null.

    Each replication draws a new response, fits once, and runs a
    complete-null bootstrap for every entry of ``methods`` (a mapping from a
    label to a :class:`MethodConfig`).  All methods share the fit and the
    replication's bootstrap seed, so they differ only in the resampling law.
    """
    t0 = time.perf_counter()
    labels = list(methods)
    base = methods[labels[0]]
    ex = _Experiment(cfg, base)

    def one(r):
        y = ex.data(r)
        fit = ex.fit(r, y)
        out = {"lambda": fit.lam}
        for label in labels:
            spec = methods[label].spec(ex.boot_seed(r), "null")
            draws = run_bootstrap(ex.X, y, fit, ex.proj, spec)
            out[label] = float(np.quantile(np.abs(draws.t_star).max(axis=1), level,
                                           method="linear"))
        return out

    outs = _map(_guarded(one), cfg.R, threads)
    result = ExperimentResult(cfg, base, "q95", 1 - level)
    q = {label: [] for label in labels}
    for r, o in enumerate(outs):
        if isinstance(o, Exception):
            result.failures.append((r, o.code, str(o)))
            result.records.append((r, "", "failure", o.code))
            continue
        result.records.append((r, "", "lambda", o["lambda"]))
        for label in labels:
            q[label].append(o[label])
            result.records.append((r, "", f"q_{label}", o[label]))
    summary = {"kind": "q95", "level": level, "replications": cfg.R,
               "failed_replications": len(result.failures)}
    for label in labels:
        summary[f"q_{label}"] = np.asarray(q[label])
        summary[f"median_q_{label}"] = float(np.median(q[label])) if q[label] else math.nan
    result.summary = summary
    result.meta = ex.meta() | {"methods": {k: asdict(m) for k, m in methods.items()}}
    summary["meta"] = result.meta
    result.seconds = time.perf_counter() - t0
    return result


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

_EXPERIMENT_KEYS = {"experiment": "coverage", "alpha": 0.05}
EXPERIMENTS = ("coverage", "fwer", "q95")


def _coerce(name, raw, default, annotation):
    text = raw.strip()
    if text.lower() in ("none", "null", "") and (default is None or "None" in str(annotation)):
        return None
    if isinstance(default, bool):
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"key {name!r}: expected a boolean, got {raw!r}")
    kind = default if default is not None else 0.0
    try:
        if isinstance(kind, int):
            return int(text)
        if isinstance(kind, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"key {name!r}: cannot parse {raw!r}") from None
    return text


def parse_scenario_text(text):
    """Parse flat ``key = value`` lines into scenario, method and experiment settings.

    Blank lines and ``#`` comments are ignored.  Keys are the field names of
    :class:`ScenarioConfig` and :class:`MethodConfig` plus ``experiment``
    (``coverage``, ``fwer`` or ``q95``) and ``alpha``.
    """
    scen = {f.name: f for f in fields(ScenarioConfig)}
    meth = {f.name: f for f in fields(MethodConfig)}
    s_kw, m_kw, e_kw = {}, {}, dict(_EXPERIMENT_KEYS)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in scen:
            f = scen[key]
            s_kw[key] = _coerce(key, value, f.default, f.type)
        elif key in meth:
            f = meth[key]
            m_kw[key] = _coerce(key, value, f.default, f.type)
        elif key == "alpha":
            e_kw[key] = _coerce(key, value, 0.05, float)
        elif key == "experiment":
            if value not in EXPERIMENTS:
                raise ConfigError(f"key 'experiment': expected one of {EXPERIMENTS}, got {value!r}")
            e_kw[key] = value
        else:
            raise ConfigError(f"unknown scenario key {key!r} (line {lineno})")
    return ScenarioConfig(**s_kw), MethodConfig(**m_kw), e_kw


def load_scenario(path):
    with open(path, encoding="utf-8") as fh:
        return parse_scenario_text(fh.read())


def scenario_text(cfg, method, experiment="coverage", alpha=0.05):
    """Inverse of :func:`parse_scenario_text`."""
    lines = [f"experiment = {experiment}", f"alpha = {alpha!r}"]
    for obj in (cfg, method):
        for k, v in asdict(obj).items():
            lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
    return "\n".join(lines) + "\n"


def full_scale_grid(cfg, seeds=50):
    """The full 300-model grid: six signal types times ``seeds`` signal seeds at n=100, p=500."""
    out = []
    for signal in SIGNALS[:-1]:
        for s in range(seeds):
            tag = re.sub(r"[^0-9A-Za-z]+", "_", signal).strip("_")
            out.append(replace(cfg, n=100, p=500, R=100, signal=signal, signal_seed=s,
                               name=f"{cfg.name}_{tag}_seed{s}"))
    return out


def run_experiment(cfg, method, experiment="coverage", alpha=0.05, threads=1):
    if experiment == "coverage":
        return run_coverage(cfg, method, alpha, threads)
    if experiment == "fwer":
        return run_fwer_power(cfg, method, alpha, threads)
    if experiment == "q95":
        # residual against Gaussian wild, everything else as configured
        methods = {"residual": replace(method, scheme="residual"),
                   "wild": replace(method, scheme="wild", multiplier="gaussian")}
        return run_q95(cfg, methods, 1 - alpha, threads)
    raise ConfigError(f"unknown experiment {experiment!r}")
