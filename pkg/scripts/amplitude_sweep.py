"""Periodic orbits, ball radii and ball certificates across forcing amplitudes.

    python3 scripts/amplitude_sweep.py --resolution 8x8x6 --amplitudes 1 10 --samples 5
"""

import argparse
import json
import time

from hpe.basis import SpectralField, make_grid, norm_l2
from hpe.dynamics import preset
from hpe.io import parse_resolution
from hpe.periodic import ball_radius, certify_ball, newton_shoot


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--resolution", default="8x8x6")
    p.add_argument("--preset", default="channel_harmonic")
    p.add_argument("--amplitudes", type=float, nargs="+", default=[1.0, 10.0])
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out", help="write the table as JSON here")
    args = p.parse_args()

    g = make_grid(*parse_resolution(args.resolution))
    rows = []
    print(f"{'amp':>8} {'|a*|':>12} {'R':>12} {'|a*|/R':>8} {'newton':>6} {'worst':>8} {'sec':>6}")
    for amp in args.amplitudes:
        t0 = time.perf_counter()
        fs = preset(args.preset, amp)
        res = newton_shoot(SpectralField.zeros(g), None, args.dt, fs, tol=args.tol)
        R = ball_radius(fs, None, g.h, grid=g)
        cert = certify_ball(fs, None, args.dt, R, samples=args.samples, grid=g)
        row = {"amplitude": amp, "norm_a_star": norm_l2(res.a_star), "R": R,
               "newton_iterations": res.iterations, "certified": bool(cert),
               "worst_ratio": cert.worst_ratio, "seconds": time.perf_counter() - t0}
        rows.append(row)
        print(f"{amp:8.3g} {row['norm_a_star']:12.5e} {R:12.5e} {row['norm_a_star'] / R:8.4f} "
              f"{res.iterations:6d} {cert.worst_ratio:8.4f} {row['seconds']:6.1f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
