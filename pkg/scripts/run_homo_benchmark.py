"""Run the homogeneous-noise detection benchmark.

Generates mean-shift contaminated datasets, runs the full adaptive PWLS
pipeline (pilot, scales, path, BIC) on each repetition, and prints one
summary row per scenario: method,k,p,scenario,JD,M,S,reps,failures.

Typical desk-scale invocations:

    python scripts/run_homo_benchmark.py --reps 200
    python scripts/run_homo_benchmark.py --reps 200 --leverage 15
    python scripts/run_homo_benchmark.py --k 200 --r 5 --reps 100 --threads 4
"""

import argparse
import sys
import time

from pwls import simbench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--p", type=int, default=15)
    ap.add_argument("--k", type=int, default=100, help="contaminated rows")
    ap.add_argument("--r", type=float, default=5.0, help="mean shift size")
    ap.add_argument("--leverage", type=float, default=None,
                    help="overwrite contaminated rows of X with this value")
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--base-seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    cfg = simbench.HomoSimConfig(n=args.n, p=args.p, k=args.k, r=args.r,
                                 leverage=args.leverage)
    t0 = time.perf_counter()
    report = simbench.run_benchmark("pwls", cfg, args.reps, args.base_seed,
                                    workers=args.threads)
    elapsed = time.perf_counter() - t0
    print("method,k,p,scenario,JD,M,S,reps,failures")
    print(simbench.format_row("pwls", cfg, report))
    print(f"# {elapsed:.1f} s", file=sys.stderr)


if __name__ == "__main__":
    main()
