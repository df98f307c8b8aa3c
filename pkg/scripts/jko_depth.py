#!/usr/bin/env python3
"""Proximal steps needed to reach KL <= eps^2, against log(1/eps)."""

import argparse

import numpy as np

from shiftgen.wgf import DiagGaussianState, run_jko


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mean", type=float, default=1.0)
    ap.add_argument("--std", type=float, default=1.0)
    ap.add_argument("--gammas", type=float, nargs="+", default=[0.1, 1.0, 10.0])
    ap.add_argument("--csv")
    args = ap.parse_args()

    eps = np.geomspace(1e-1, 1e-12, 12)
    s0 = DiagGaussianState([args.mean], [args.std])
    rows = []
    print("eps       " + "".join(f"gamma={g:<8g}" for g in args.gammas))
    for e in eps:
        counts = [run_jko(s0, g, e).n_steps for g in args.gammas]
        rows.append([e, *counts])
        print(f"{e:<10.1e}" + "".join(f"{c:<14d}" for c in counts))
    table = np.array(rows)
    for j, g in enumerate(args.gammas):
        slope, icpt = np.polyfit(np.log(1 / eps), table[:, j + 1], 1)
        print(f"gamma={g:g}: N ~ {slope:.3f} log(1/eps) + {icpt:.2f}  (predicted slope {1 / np.log1p(g):.3f})")
    if args.csv:
        np.savetxt(args.csv, table, delimiter=",", header="eps," + ",".join(f"gamma_{g:g}" for g in args.gammas), comments="")


if __name__ == "__main__":
    main()
