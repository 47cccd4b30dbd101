#!/usr/bin/env python3
"""Plot normalized dynamic regret from a compare long.csv (needs matplotlib)."""

import argparse
import csv
from collections import defaultdict

import numpy as np


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("long_csv")
    p.add_argument("--tau", type=int, required=True)
    p.add_argument("--out", default="regret.png")
    args = p.parse_args()
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    curves = defaultdict(lambda: defaultdict(list))
    with open(args.long_csv) as fh:
        for row in csv.DictReader(fh):
            curves[row["mechanism"]][int(row["seed"])].append(float(row["cum_dyn_regret"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for mech, by_seed in curves.items():
        reg = np.array(list(by_seed.values()))
        norm = reg / (args.tau * np.arange(1, reg.shape[1] + 1))
        mean, std = norm.mean(axis=0), norm.std(axis=0)
        rounds = np.arange(1, len(mean) + 1)
        ax.plot(rounds, mean, label=mech)
        ax.fill_between(rounds, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("round")
    ax.set_ylabel("dynamic regret / (R tau)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
