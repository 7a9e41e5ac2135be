#!/usr/bin/env python3
"""Plot pose-sweep summaries: median rotation error and dynamic coverage
against dynamic ratio, one line per policy, one panel per noise level.

usage: plot_sweep.py OUT_DIR/pose_sweep_summary.csv [-o sweep.png]
"""
import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("summary")
    ap.add_argument("-o", "--output", default="sweep.png")
    args = ap.parse_args()

    df = pd.read_csv(args.summary)
    noises = sorted(df["noise"].unique())
    fig, axes = plt.subplots(2, len(noises), figsize=(4 * len(noises), 6), squeeze=False, sharex=True)
    for col, noise in enumerate(noises):
        sub = df[df["noise"] == noise]
        for policy, g in sub.groupby("policy"):
            g = g.sort_values("dynamic_ratio")
            axes[0][col].plot(g["dynamic_ratio"], g["median_rot_err_deg"], marker="o", label=policy)
            axes[1][col].plot(g["dynamic_ratio"], g["median_dynamic_coverage"], marker="o", label=policy)
        axes[0][col].set_title(f"noise {noise} px")
        axes[0][col].set_yscale("log")
        axes[1][col].set_xlabel("dynamic ratio")
    axes[0][0].set_ylabel("median rotation error (deg)")
    axes[1][0].set_ylabel("median dynamic coverage")
    axes[0][0].legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
