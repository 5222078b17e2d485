"""Run the heteroscedastic detection benchmark.

Each repetition draws a variance-function contamination model, then scores
both the variance-adjusted pipeline (hpwls) and, optionally, the plain
homogeneous one (pwls) on the same seeds for a side-by-side row.

    python scripts/run_hetero_benchmark.py --case 1 --reps 100
    python scripts/run_hetero_benchmark.py --case 2 --reps 100 --with-plain
"""

import argparse
import sys
import time

from pwls import simbench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--p", type=int, default=15)
    ap.add_argument("--k", type=int, default=10, help="contaminated rows")
    ap.add_argument("--r", type=float, default=20.0, help="shift multiplier")
    ap.add_argument("--case", type=int, default=1, choices=(1, 2),
                    help="variance-function shape")
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--base-seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--with-plain", action="store_true",
                    help="also run the homogeneous pipeline on the same seeds")
    args = ap.parse_args()

    cfg = simbench.HeteroSimConfig(n=args.n, p=args.p, k=args.k, r=args.r,
                                   case=args.case)
    methods = ["hpwls"] + (["pwls"] if args.with_plain else [])
    print("method,k,p,scenario,JD,M,S,reps,failures")
    for method in methods:
        t0 = time.perf_counter()
        report = simbench.run_benchmark(method, cfg, args.reps,
                                        args.base_seed, workers=args.threads)
        elapsed = time.perf_counter() - t0
        print(simbench.format_row(method, cfg, report))
        print(f"# {method}: {elapsed:.1f} s", file=sys.stderr)


if __name__ == "__main__":
    main()
