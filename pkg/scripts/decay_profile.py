"""Radial envelope of G0 against the far-field law and the fitted decay bounds."""
import argparse
from pathlib import Path

import numpy as np

from randgreen import green as gm
from randgreen.export import write_json, write_table_csv
from randgreen.kernels import ExpTailKernel, GaussianKernel, GridSpec


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/decay")
    ap.add_argument("--extent", type=float, default=80.0)
    ap.add_argument("--points", type=int, default=160)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = GridSpec(3, args.extent, args.points)
    axis = grid.axis()
    i = grid.origin_index
    for name, kern, model, tol in (("gaussian", GaussianKernel(3, 1.0), "gaussian_bound", 1e-9),
                                   ("exp_tail", ExpTailKernel(3, 1.0), "exponential_bound", 1e-7)):
        g = gm.green_series(kern, grid, tol)
        fit = gm.decay_fit(g, model)
        r = axis[i[0] + 1:]
        line = g.values[i[0] + 1:, i[1], i[2]]
        far = gm.far_field_green(kern.sigma(), np.c_[r, np.zeros_like(r), np.zeros_like(r)])
        write_table_csv(out / f"{name}_axis.csv", ["r", "G0", "far_field"], np.c_[r, line, far].tolist())
        write_json(out / f"{name}_fit.json", fit.to_dict())
        print(f"{name}: fit {fit.constants}, violation {fit.max_violation:.2e}, "
              f"G0/far at r={r[-1]:.0f}: {line[-1] / far[-1]:.6f}")


if __name__ == "__main__":
    main()
