"""Temporal order of the discrete energy balance on a forced nonlinear run.

    python3 scripts/convergence_study.py --resolution 8x8x6 --levels 4
"""

import argparse
import math

import numpy as np

from hpe.basis import make_grid, random_field
from hpe.constraint import project
from hpe.dynamics import preset
from hpe.integrator import energy_balance_residual, integrate
from hpe.io import parse_resolution


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--resolution", default="8x8x6")
    p.add_argument("--amplitude", type=float, default=10.0)
    p.add_argument("--dt", type=float, default=4e-3, help="coarsest step")
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--t-end", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    g = make_grid(*parse_resolution(args.resolution))
    v0 = project(random_field(g, np.random.default_rng(args.seed), decay=0.5))
    fs = preset("channel_harmonic", args.amplitude)
    prev = None
    print(f"{'dt':>10} {'sum|r|dt':>12} {'order':>6}")
    for lev in range(args.levels):
        dt = args.dt / 2**lev
        r = energy_balance_residual(integrate(v0, 0.0, args.t_end, dt, fs)[1])
        order = f"{math.log2(prev / r):6.3f}" if prev else ""
        print(f"{dt:10.3e} {r:12.5e} {order:>6}")
        prev = r


if __name__ == "__main__":
    main()
