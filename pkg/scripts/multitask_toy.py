"""Train the dense multi-task net on synthetic VA/AU/expression data."""

import argparse

from affectkit.experiments import run_multitask_toy


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--tasks", default="va,au,expr", help="comma-separated subset of va,au,expr")
    args = ap.parse_args()

    run = run_multitask_toy(seed=args.seed, steps=args.steps, tasks=tuple(args.tasks.split(",")))
    s = run.scores
    print(f"loss {run.trace[0]:.4f} -> {run.trace[-1]:.4f} over {len(run.trace)} steps")
    print(f"CCC_V {s.ccc_v:.4f}  CCC_A {s.ccc_a:.4f}  AU F1 {s.au_f1:.4f}  expr acc {s.expr_acc:.4f}  expr F1 {s.expr_f1:.4f}")


if __name__ == "__main__":
    main()
