#!/usr/bin/env python3
"""L2 vs Tukey on the contaminated linear task, swept over seeds and outlier fractions.

Prints one row per (fraction, seed) with clean-test MPE and convergence epochs,
then the median MPE ratio per fraction. Run outputs land under ``--out``.

    python scripts/run_compare.py --fractions 0.0 0.3 --seeds 0 1 2 3 4
"""

from __future__ import annotations

import argparse
import os

import numpy as np

from robustreg.config import load_config
from robustreg.experiment import run_compare


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/linear_compare.json")
    ap.add_argument("--fractions", type=float, nargs="+", default=[0.0, 0.1, 0.3, 0.5])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default="runs/sweep")
    args = ap.parse_args()

    print("fraction,seed,l2_test_mpe,tukey_test_mpe,ratio,epochs_l2,epochs_tukey,reached")
    summary = {}
    for f in args.fractions:
        for s in args.seeds:
            cfg = load_config(args.config, [f"outliers.fraction={f}"], seed=s)
            r = run_compare(cfg, os.path.join(args.out, f"frac{f:g}_seed{s}"))
            summary.setdefault(f, []).append(r["mpe_ratio"])
            print(f"{f:g},{s},{r['l2_test_mpe']:.4f},{r['tukey_test_mpe']:.4f},{r['mpe_ratio']:.3f},"
                  f"{r['epochs_l2']},{r['epochs_tukey']},{r['reached']}", flush=True)
    for f, ratios in summary.items():
        print(f"# fraction {f:g}: median L2/Tukey MPE ratio {np.median(ratios):.3f}")


if __name__ == "__main__":
    main()
