"""Coverage experiment on the scaled homoscedastic Toeplitz scenario.

    python3 scripts/run_coverage.py --out results/coverage --threads 4

Any scenario field can be changed with ``--set key=value`` (for example
``--set p=500 --set R=20``).
"""

import argparse
import json

from hdboot.simharness import parse_scenario_text, run_coverage

DEFAULT = """
name = toeplitz_coverage
design = toeplitz
rho = 0.9
n = 100
p = 100
s0 = 3
signal = U(-2,2)
R = 100
scheme = residual
B = 500
studentization = plain
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="results/coverage")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    cfg, method, _ = parse_scenario_text(DEFAULT + "\n".join(s.replace("=", " = ", 1) for s in args.set))
    res = run_coverage(cfg, method, args.alpha, args.threads)
    res.write(args.out)
    keys = ("mean_coverage_bootstrap", "mean_coverage_normal_plain", "mean_coverage_normal_robust")
    print(json.dumps({k: res.summary[k] for k in keys} | {"seconds": res.seconds}, indent=2))


if __name__ == "__main__":
    main()
