"""Compare embedding geometry with and without the angular margin.

    python3 scripts/arcface_geometry.py --seeds 5 --steps 2000
"""

import argparse
import time

from affectkit.experiments import run_arcface_geometry


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--margin", type=float, default=0.5)
    ap.add_argument("--scale", type=float, default=64.0)
    args = ap.parse_args()

    print("seed  intra(m)  intra(0)  angle(m)  angle(0)  acc(m)  acc(0)")
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        m = run_arcface_geometry(seed, args.margin, args.scale, steps=args.steps)
        b = run_arcface_geometry(seed, 0.0, args.scale, steps=args.steps)
        print(f"{seed:4d}  {m.intra_cos:8.4f}  {b.intra_cos:8.4f}  {m.min_center_angle:8.4f}  {b.min_center_angle:8.4f}"
              f"  {m.accuracy:6.3f}  {b.accuracy:6.3f}   ({time.perf_counter() - t0:.1f} s)")


if __name__ == "__main__":
    main()
