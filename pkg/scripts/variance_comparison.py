"""V_measure, the three-term expansion and the Monte Carlo variance for exp_abs under gaussian jumps."""
import argparse

import numpy as np

from randgreen import green as gm
from randgreen.kernels import GaussianKernel, GridSpec
from randgreen.potentials import ExpAbs, potential_mc, variance_report
from randgreen.simulate import ProcessSpec, SimulationSettings, StopRule


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--paths", type=int, nargs="+", default=[1000, 4000, 16000])
    args = ap.parse_args()
    kern = GaussianKernel(3, 1.0)
    f = ExpAbs(3)
    g = gm.green_series(kern, GridSpec(3, 32.0, 128), 1e-9)
    proc = ProcessSpec("cpp", 3, kernel=kern)
    st = SimulationSettings(stop=StopRule(adaptive=True), threads=args.threads)
    for n in args.paths:
        rep = variance_report(f, g, potential_mc(f, np.zeros(3), proc, n, args.seed, st))
        print(f"N={n:6d}  V_mc={rep.v_monte_carlo:.4f} +- {rep.mc_standard_error:.4f}  "
              f"V_measure={rep.v_measure:.4f}  expansion={rep.v_three_term:.4f}  flags={rep.discrepancy_flags}")


if __name__ == "__main__":
    main()
