"""Command-line front end.

    hdboot fit DATA.csv [--response COL] [--lambda L] [--desparsify]
    hdboot infer DATA.csv [--scheme wild] [--b 1000] [--wy] [--group a,b] ...
    hdboot simulate SCENARIO.cfg [--paper-scale] [--set key=value ...]
    hdboot replay OUT/manifest.json

Structured results go to standard output as JSON and into ``--out``;
progress goes to standard error.  Exit status: 0 success, 2 usage,
3 data, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .bootstrap import BootstrapSpec, bootstrap_inference
from .despars import desparsify
from .errors import DimensionMismatch, HDBootError, ParseError, UsageError, Unidentifiable
from .lasso import SolverOptions, fit_lasso, lambda_grid, select_lambda_cv
from .nodewise import default_lambda_x, nodewise_residuals
from . import simharness as sh

SCHEMA_VERSION = 1
THREADS_ENV = "HDBOOT_THREADS"

log = logging.getLogger("hdboot")


def read_csv(path):
    """Read a headed numeric CSV; returns ``(names, values)``."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path} is not UTF-8: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: missing header")
    names = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if not body:
        raise ParseError(f"{path}: no data rows")
    values = np.empty((len(body), len(names)))
    for i, r in enumerate(body, start=2):
        if len(r) != len(names):
            raise ParseError(f"{path}: row {i} has {len(r)} fields, header has {len(names)}")
        for k, v in enumerate(r):
            try:
                values[i - 2, k] = float(v)
            except ValueError:
                raise ParseError(
                    f"{path}: row {i}, column {k + 1} ({names[k]!r}): not a number: {v!r}"
                ) from None
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise ParseError(f"{path}: row {bad[0] + 2}, column {bad[1] + 1}: non-finite value")
    return names, values


def split_xy(names, values, response=None):
    col = 0 if response is None else _column(names, response)
    y = values[:, col]
    keep = [k for k in range(len(names)) if k != col]
    xnames = [names[k] for k in keep]
    X = values[:, keep]
    if X.shape[1] == 0:
        raise DimensionMismatch("no predictor columns")
    zero = [xnames[k] for k in np.flatnonzero(~X.any(axis=0))]
    if zero:
        raise Unidentifiable(f"predictor column(s) {zero} are identically zero")
    return xnames, np.ascontiguousarray(X), np.ascontiguousarray(y)


def _column(names, key):
    if key in names:
        return names.index(key)
    try:
        return int(key)
    except ValueError:
        raise UsageError(f"unknown column {key!r}") from None


def _group(xnames, text):
    if text is None:
        return None
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok in xnames:
            out.append(xnames.index(tok))
        else:
            try:
                j = int(tok)
            except ValueError:
                raise UsageError(f"unknown group member {tok!r}") from None
            if not 0 <= j < len(xnames):
                raise UsageError(f"group index {j} out of range")
            out.append(j)
    return out


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    raise TypeError(type(v))


def _write_manifest(out, command, argv, options, inputs, seconds):
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "argv": argv,
        "cwd": os.getcwd(),
        "options": options,
        "inputs": {os.path.abspath(p): sha256(p) for p in inputs},
        "version": __version__,
        "timing": {"seconds": seconds},
    }
    _dump(manifest, os.path.join(out, "manifest.json"))


def _resolve_lambda(args, X, y):
    if args.lam is not None:
        return args.lam
    grid = lambda_grid(X, y, args.grid_size, args.grid_ratio)
    return select_lambda_cv(X, y, min(args.cv_folds, X.shape[0]), grid, args.seed)


def cmd_fit(args):
    names, values = read_csv(args.data)
    xnames, X, y = split_xy(names, values, args.response)
    lam = _resolve_lambda(args, X, y)
    fit = fit_lasso(X, y, lam)
    report = {"schema_version": SCHEMA_VERSION, "columns": xnames, "n": X.shape[0],
              "p": X.shape[1], **fit.summary()}
    options = {"lambda": lam, "response": args.response, "seed": args.seed,
               "cv_folds": args.cv_folds}
    if args.desparsify:
        lx = args.lambda_x if args.lambda_x is not None else default_lambda_x(*X.shape)
        proj = nodewise_residuals(X, lx, threads=_threads(args))
        res = desparsify(X, y, fit, proj)
        report["desparsified"] = res.to_dict()
        report["lambda_x"] = lx
        options["lambda_x"] = lx
    _dump(report, os.path.join(args.out, "fit.json"))
    return report, options


def cmd_infer(args):
    if args.b < 1:
        raise UsageError(f"--b must be >= 1, got {args.b}")
    if not 0 < args.alpha < 1:
        raise UsageError(f"--alpha must lie in (0, 1), got {args.alpha}")
    names, values = read_csv(args.data)
    xnames, X, y = split_xy(names, values, args.response)
    threads = _threads(args)
    lam = _resolve_lambda(args, X, y)
    fit = fit_lasso(X, y, lam)
    lx = args.lambda_x if args.lambda_x is not None else (
        default_lambda_x(*X.shape) if X.shape[1] > 1 else 0.0)
    proj = nodewise_residuals(X, lx, threads=threads)
    studentization = "plain" if args.plain else "robust"
    res = desparsify(X, y, fit, proj, studentization)
    spec = BootstrapSpec(scheme=args.scheme, multiplier=args.multiplier, B=args.b,
                         studentization=studentization, seed=args.seed)
    group = _group(xnames, args.group)
    log.info("bootstrapping %d replicates (%s)", args.b, args.scheme)
    out = bootstrap_inference(X, y, fit, proj, res, spec, args.alpha, group=group,
                              simultaneous=args.simultaneous, wy=args.wy, threads=threads)
    report = {"schema_version": SCHEMA_VERSION, "columns": xnames, "lambda": lam,
              "lambda_x": lx, "alpha": args.alpha, "s_hat": fit.s_hat, **out.to_dict()}
    cols, rows = out.table()
    with open(os.path.join(args.out, "inference.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variable"] + cols)
        for row in rows:
            j = int(row["targets"])
            w.writerow([xnames[j]] + [_cell(row[c]) for c in cols])
    _dump(report, os.path.join(args.out, "inference.json"))
    options = {"lambda": lam, "lambda_x": lx, "scheme": args.scheme, "B": args.b,
               "alpha": args.alpha, "seed": args.seed, "studentization": studentization,
               "multiplier": args.multiplier, "group": group, "simultaneous": args.simultaneous,
               "wy": args.wy, "threads": threads}
    return report, options


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _apply_overrides(cfg, method, exp, pairs):
    text = sh.scenario_text(cfg, method, exp["experiment"], exp["alpha"])
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        text += pair + "\n"
    return sh.parse_scenario_text(text)


def cmd_simulate(args):
    cfg, method, exp = sh.load_scenario(args.scenario)
    if args.set:
        cfg, method, exp = _apply_overrides(cfg, method, exp, args.set)
    threads = _threads(args)
    configs = sh.full_scale_grid(cfg) if args.paper_scale else [cfg]
    summaries = []
    for k, c in enumerate(configs):
        log.info("scenario %s (%d/%d): %s, R=%d", c.name, k + 1, len(configs),
                 exp["experiment"], c.R)
        result = sh.run_experiment(c, method, exp["experiment"], exp["alpha"], threads)
        result.write(args.out)
        summaries.append({k2: v for k2, v in result.summary.items() if k2 != "meta"}
                         | {"name": c.name})
        log.info("scenario %s done in %.1fs", c.name, result.seconds)
    report = {"schema_version": SCHEMA_VERSION, "experiment": exp["experiment"],
              "results": summaries}
    options = {"scenario": sh.scenario_text(cfg, method, exp["experiment"], exp["alpha"]),
               "paper_scale": args.paper_scale, "threads": threads}
    return report, options


def cmd_replay(args):
    try:
        with open(args.manifest) as fh:
            manifest = json.load(fh)
        argv, cwd, inputs = list(manifest["argv"]), manifest["cwd"], manifest["inputs"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"cannot read manifest {args.manifest}: {exc}") from None
    if manifest.get("version") != __version__:
        log.warning("manifest was written by hdboot %s, running %s",
                    manifest.get("version"), __version__)
    for path, digest in inputs.items():
        if not os.path.exists(path) or sha256(path) != digest:
            raise ParseError(f"input {path} is missing or changed since the recorded run")
    if "--out" in argv:
        i = argv.index("--out")
        del argv[i:i + 2]
    argv += ["--out", os.path.abspath(args.out)]
    here = os.getcwd()
    os.chdir(cwd)
    try:
        return main(argv)
    finally:
        os.chdir(here)


def build_parser():
    p = argparse.ArgumentParser(prog="hdboot", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", default=".", help="output directory (default: .)")
        sp.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV} or 1)")
        sp.add_argument("-v", "--verbose", action="store_true")

    def data(sp):
        sp.add_argument("data", help="CSV file with a header row")
        sp.add_argument("--response", default=None, help="response column (default: first)")
        sp.add_argument("--lambda", dest="lam", type=float, default=None,
                        help="Lasso penalty (default: 10-fold CV)")
        sp.add_argument("--lambda-x", type=float, default=None,
                        help="nodewise penalty (default: sqrt(log p / n))")
        sp.add_argument("--cv-folds", type=int, default=10)
        sp.add_argument("--grid-size", type=int, default=50)
        sp.add_argument("--grid-ratio", type=float, default=0.01)
        sp.add_argument("--seed", type=int, default=0)

    f = sub.add_parser("fit", help="fit the Lasso (and optionally de-sparsify)")
    data(f)
    f.add_argument("--desparsify", action="store_true")
    common(f)

    i = sub.add_parser("infer", help="bootstrap confidence intervals and tests")
    data(i)
    i.add_argument("--alpha", type=float, default=0.05)
    i.add_argument("--scheme", choices=["residual", "wild", "xyz", "zc"], default="wild")
    i.add_argument("--b", type=int, default=1000, help="bootstrap replicates")
    i.add_argument("--multiplier", choices=["gaussian", "rademacher", "mammen"],
                   default="gaussian")
    st = i.add_mutually_exclusive_group()
    st.add_argument("--robust", action="store_true", help="robust studentization (default)")
    st.add_argument("--plain", action="store_true", help="noise-level studentization")
    i.add_argument("--group", default=None, help="comma-separated columns for the group test")
    i.add_argument("--simultaneous", choices=["minmax", "abs"], default=None)
    i.add_argument("--wy", action="store_true", help="Westfall-Young adjusted p-values")
    common(i)

    s = sub.add_parser("simulate", help="run a simulation scenario file")
    s.add_argument("scenario")
    s.add_argument("--paper-scale", action="store_true",
                   help="run the full n=100, p=500 grid of 6 signals x 50 seeds")
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a scenario key")
    common(s)

    r = sub.add_parser("replay", help="re-run a recorded manifest")
    r.add_argument("manifest")
    r.add_argument("--out", default=".")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


COMMANDS = {"fit": cmd_fit, "infer": cmd_infer, "simulate": cmd_simulate}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(name)s: %(message)s")
    try:
        if args.command == "replay":
            return cmd_replay(args)
        if getattr(args, "threads", None) is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        os.makedirs(args.out, exist_ok=True)
        t0 = time.perf_counter()
        report, options = COMMANDS[args.command](args)
        inputs = [args.data] if hasattr(args, "data") else [args.scenario]
        _write_manifest(args.out, args.command, argv, options, inputs, time.perf_counter() - t0)
        print(_dump(report))
        return 0
    except HDBootError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return exc.exit_status
    except ValueError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
