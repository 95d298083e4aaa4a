"""Monte Carlo potential against the lattice value as the path count grows."""
import argparse

import numpy as np

from randgreen import green as gm
from randgreen.kernels import GaussianKernel, GridSpec
from randgreen.potentials import ExpAbs, potential_exact, potential_mc
from randgreen.simulate import ProcessSpec, SimulationSettings, StopRule


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.05, 0.02, 0.005])
    ap.add_argument("--paths", type=int, default=4000)
    args = ap.parse_args()
    kern = GaussianKernel(3, 1.0)
    f = ExpAbs(3)
    exact = potential_exact(f, np.zeros(3), gm.green_series(kern, GridSpec(3, 32.0, 256), 1e-9))
    print(f"lattice value {exact.value:.5f} (quadrature error {exact.quadrature_error:.1e})")
    proc = ProcessSpec("cpp", 3, kernel=kern)
    for eps in args.eps:
        st = SimulationSettings(stop=StopRule(adaptive=True, eps_tail=eps), threads=args.threads)
        est = potential_mc(f, np.zeros(3), proc, args.paths, args.seed, st)
        print(f"eps={eps:<6} mean={est.mean:.4f} se={est.standard_error:.4f} tail={est.tail_estimate:.4f} "
              f"mean+tail={est.mean + est.tail_estimate:.4f} jumps/path={est.mean_work:.0f}")


if __name__ == "__main__":
    main()
