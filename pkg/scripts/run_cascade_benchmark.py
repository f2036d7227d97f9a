#!/usr/bin/env python3
"""Stage-1 vs refined validation MPE of the articulated-figure cascade over several seeds."""

from __future__ import annotations

import argparse
import os
import time

from robustreg.config import load_config
from robustreg.experiment import run_cascade


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/figure_cascade.json")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="runs/cascade_benchmark")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    print("seed,stage1_val_mpe,refined_val_mpe,ratio,pcp_strict_stage1,pcp_strict_refined,seconds")
    for s in args.seeds:
        cfg = load_config(args.config, args.override, seed=s)
        t0 = time.perf_counter()
        r = run_cascade(cfg, os.path.join(args.out, f"seed{s}"))
        a, b = r["val_stage1_mpe"], r["val_refined_mpe"]
        print(f"{s},{a:.4f},{b:.4f},{b / a:.3f},{r['stage1']['pcp_strict']:.3f},"
              f"{r['refined']['pcp_strict']:.3f},{time.perf_counter() - t0:.0f}", flush=True)


if __name__ == "__main__":
    main()
