"""Twin-run comparison of coarse resolutions against a fine reference.

    python3 scripts/refinement_ladder.py --fine 12x12x10 --ladder 4x4x4 6x6x6 8x8x8
"""

import argparse

import numpy as np

from hpe.basis import make_grid, random_field
from hpe.constraint import project
from hpe.diagnostics import TwinRun, weak_strong_compare
from hpe.dynamics import preset
from hpe.io import parse_resolution


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--fine", default="12x12x10")
    p.add_argument("--ladder", nargs="+", default=["4x4x4", "6x6x6", "8x8x8"])
    p.add_argument("--dt", type=float, default=2e-3)
    p.add_argument("--t-end", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv-prefix", help="write one CSV per rung with this prefix")
    args = p.parse_args()

    gf = make_grid(*parse_resolution(args.fine))
    v0 = project(random_field(gf, np.random.default_rng(args.seed), decay=1.0))
    fs = preset("channel_harmonic")
    fine = TwinRun(gf, args.dt, args.t_end, fs, v0, sample_every=10)
    print(f"{'coarse':>10} {'sup|sigma|':>12} {'|sigma(t0)|':>12} {'int g':>10}")
    for r in args.ladder:
        gc = make_grid(*parse_resolution(r))
        res = weak_strong_compare(TwinRun(gc, args.dt, args.t_end, fs, v0, 10), fine)
        print(f"{r:>10} {res.sup_sigma:12.4e} {res.sigma_norms[0]:12.4e} {res.int_g[-1]:10.4g}")
        if args.csv_prefix:
            res.to_csv(f"{args.csv_prefix}_{r}.csv")


if __name__ == "__main__":
    main()
