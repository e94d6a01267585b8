"""Full-scale coverage grid: six signal types times 50 signal seeds at n=100, p=500.

This is opt-in and slow (300 scenarios of R=100 replications each; expect
days on one core).  Use ``--limit`` to run the first few scenarios and
``--dry-run`` to list them.  Each scenario writes its own result files, and
scenarios whose summary already exists are skipped, so an interrupted run
can be resumed.

    python3 scripts/full_scale_grid.py --out results/grid --threads 8
"""

import argparse
from pathlib import Path

from hdboot.simharness import MethodConfig, ScenarioConfig, full_scale_grid, run_coverage


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="results/grid")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--limit", type=int, default=None)
    ap.add_argument("--rho", type=float, default=0.9)
    ap.add_argument("--b", type=int, default=500)
    ap.add_argument("--dry-run", action="store_true")
    args = ap.parse_args()
    base = ScenarioConfig(name="grid", design="toeplitz", rho=args.rho)
    method = MethodConfig(scheme="residual", B=args.b, studentization="plain")
    grid = full_scale_grid(base, args.seeds)[: args.limit]
    for k, cfg in enumerate(grid):
        done = Path(args.out) / f"{cfg.name}_coverage.json"
        if args.dry_run or done.exists():
            print(f"{k + 1}/{len(grid)} {cfg.name}" + (" (done)" if done.exists() else ""))
            continue
        res = run_coverage(cfg, method, threads=args.threads)
        res.write(args.out)
        print(f"{k + 1}/{len(grid)} {cfg.name} mean coverage "
              f"{res.summary['mean_coverage_bootstrap']:.3f} ({res.seconds:.0f}s)", flush=True)


if __name__ == "__main__":
    main()
