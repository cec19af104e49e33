"""Time the sequential and parallel scans over a range of lengths and fit a line.

Usage: python scripts/bench_scan.py [--max-pow 16] [--reps 5]
"""

import argparse

from msecg.bench import bench_scan, linear_fit_r2


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--min-pow", type=int, default=10)
    ap.add_argument("--max-pow", type=int, default=16)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--d-inner", type=int, default=8)
    ap.add_argument("--d-state", type=int, default=16)
    args = ap.parse_args()

    lengths = [2**k for k in range(args.min_pow, args.max_pow + 1)]
    rows, worst = bench_scan(lengths, args.reps, args.d_inner, args.d_state)
    print(f"{'impl':<11} {'L':>7} {'median s':>10}")
    for r in rows:
        print(f"{r.impl:<11} {r.length:>7} {r.median_s:>10.4f}")
    for impl in ("sequential", "parallel"):
        sel = [r for r in rows if r.impl == impl]
        a, b, r2 = linear_fit_r2([r.length for r in sel], [r.median_s for r in sel])
        print(f"{impl}: t = {a:.3e}*L + {b:.3e}  R^2 = {r2:.4f}")
    print(f"max |parallel - sequential| = {worst:.2e}")


if __name__ == "__main__":
    main()
