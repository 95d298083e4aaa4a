"""G0 - G_lambda at the origin and at |x| = 2 against the sqrt(2 lambda)/(2 pi) continuum law."""
import argparse
import math
from pathlib import Path

import numpy as np

from randgreen import green as gm
from randgreen.export import write_table_csv
from randgreen.kernels import GaussianKernel, GridSpec


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/resolvent_gap.csv")
    args = ap.parse_args()
    kern = GaussianKernel(3, 1.0)
    grid = GridSpec(3, 8.0, 64)
    g0 = gm.green_series(kern, grid, 1e-10)
    i = grid.origin_index
    at2 = (i[0] + int(round(2 / grid.spacing)), i[1], i[2])
    rows = []
    print(f"{'lambda':>8} {'gap(0)':>11} {'gap(2)':>11} {'law':>11} {'rel(2)':>9}")
    for lam in (1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5, 1e-6):
        g = gm.resolvent_kernel(kern, lam, grid, 1e-10)
        gap0 = g0.values[i] - g.values[i]
        gap2 = g0.values[at2] - g.values[at2]
        law = math.sqrt(2 * lam) / (2 * math.pi)
        rows.append([lam, gap0, gap2, law, gap2 / g0.values[at2]])
        print(f"{lam:8.0e} {gap0:11.4e} {gap2:11.4e} {law:11.4e} {rows[-1][-1]:9.2e}")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_table_csv(args.out, ["lambda", "gap_origin", "gap_r2", "sqrt_law", "relative_gap_r2"], rows)
    # lambda needed for a 1e-3 relative gap at |x| = 2
    need = (2 * math.pi * 1e-3 * float(g0.values[at2])) ** 2 / 2
    print(f"lambda for 1e-3 relative at |x|=2: about {need:.1e}")
    return np.asarray(rows)


if __name__ == "__main__":
    main()
