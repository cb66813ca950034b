"""Finite-difference check of every loss and network block."""

import argparse
import sys

from affectkit.gradsuite import format_report, run_suite


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    results = run_suite(points=args.points, seed=args.seed)
    print(format_report(results))
    print(f"total {sum(r.seconds for r in results):.1f} s")
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
