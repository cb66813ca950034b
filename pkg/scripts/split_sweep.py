"""Run the subject-independent splitter over many random video tables."""

import argparse
import warnings

import numpy as np

from affectkit.dataset import SplitWarning, subject_independent_split, subject_overlaps
from affectkit.experiments import random_video_table


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--datasets", type=int, default=200)
    ap.add_argument("--ratios", default="0.6,0.1,0.3")
    ap.add_argument("--min-subjects", type=int, default=10)
    args = ap.parse_args()
    ratios = np.array([float(r) for r in args.ratios.split(",")])

    devs, overlaps, warned = [], 0, 0
    for i in range(args.datasets):
        table = random_video_table(np.random.default_rng([6, i]), min_subjects=args.min_subjects)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SplitWarning)
            a = subject_independent_split(table, tuple(ratios), seed=i)
        warned += any(issubclass(w.category, SplitWarning) for w in caught)
        overlaps += len(subject_overlaps(a, table))
        devs.append(np.max(np.abs(np.array(a.frame_ratios(table)) - ratios)))
    devs = np.array(devs)
    print(f"{args.datasets} datasets: overlaps {overlaps}, warnings {warned}")
    print(f"max |ratio - target|: mean {devs.mean():.4f}, p95 {np.quantile(devs, 0.95):.4f}, worst {devs.max():.4f}")


if __name__ == "__main__":
    main()
