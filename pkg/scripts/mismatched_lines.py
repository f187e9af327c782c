"""Reactive-power share of the second inverter as its branch resistance shrinks."""
import argparse

import numpy as np

from vpdroop.acceptance import mismatched_line_sweep

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--points", type=int, default=10)
    args = ap.parse_args()
    ratios = np.linspace(1.0, 0.1, args.points)
    print("r2/r1,q_share")
    for r, q in zip(ratios, mismatched_line_sweep(ratios)):
        print(f"{r:.3f},{q:.4f}")
