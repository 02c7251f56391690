#!/usr/bin/env python3
"""Template for plotting sweep outputs (documentation, not a runtime
dependency: requires matplotlib, which the package itself does not).

Reads the summary CSV written by `isacsar sweep` / `isacsar report` and
draws the RMSE-vs-SNR and ISLR-vs-SNR comparison curves.

Usage: python docs/plot_template.py out/summary.csv figures/
"""

import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib.pyplot as plt


def main(summary_csv: str, outdir: str) -> None:
    curves = defaultdict(list)
    with open(summary_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["rmse_mean"] == "NA":
                continue
            curves[row["method"]].append(
                (float(row["snr_db"]), float(row["rmse_mean"]), float(row["islr_mean"]))
            )
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for idx, (ylabel, fname) in enumerate(
        [("localization RMSE [m]", "rmse_vs_snr.png"), ("ISLR [dB]", "islr_vs_snr.png")]
    ):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for method, pts in sorted(curves.items()):
            pts = sorted(pts)
            ax.plot([p[0] for p in pts], [p[1 + idx] for p in pts], "o-", label=method)
        ax.set_xlabel("SNR [dB]")
        ax.set_ylabel(ylabel)
        ax.grid(alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / fname, dpi=150)
        print(f"wrote {out / fname}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2] if len(sys.argv) > 2 else "figures")
