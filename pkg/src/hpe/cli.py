"""Command-line entry points: simulate, periodic, steady, compare, selftest.

Exit codes: 0 success, 1 selftest failure, 2 non-convergence, 3 invalid
configuration, 4 numerical blow-up.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import tempfile
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .basis import SpectralField, inner_l2, make_grid, norm_grad_sq, norm_l2, random_field
from .constraint import constraint_residual, project
from .diagnostics import (
    TwinRun,
    apriori_bound_check,
    gronwall_weights,
    h1_monitor,
    l2_energy_bound_check,
    poincare_check,
)
from .dynamics import advect, compute_w
from .integrator import BlowUpError, State, Stepper, adjust_dt, energy_balance_residual, integrate
from .io import (
    CheckpointError,
    ConfigError,
    RunConfig,
    config_from_dict,
    emit_series,
    load_checkpoint,
    parse_config,
    parse_resolution,
    save_checkpoint,
)
from .periodic import NonConvergenceError, newton_shoot, picard_solve, poincare_map, steady_solve

__all__ = ["main", "selftest", "build_parser"]

log = logging.getLogger("hpe")

EXIT_OK, EXIT_SELFTEST, EXIT_NONCONV, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hpe", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["simulate", "periodic", "steady", "compare", "selftest"])
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    p.add_argument("--method", choices=["picard", "newton"])
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--resolution", help="MxNxK grid override")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _load(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else config_from_dict({})
    d = cfg.to_json()
    d["solver"]["mode"] = args.command
    if args.method:
        d["solver"]["method"] = args.method
    if args.tol is not None:
        d["solver"]["tol"] = args.tol
    if args.max_iters is not None:
        d["solver"]["maxit"] = args.max_iters
    if args.resolution:
        M, N, K = parse_resolution(args.resolution)
        d["grid"].update(M=M, N=N, K=K, Q=None)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out is not None:
        d["output"]["dir"] = str(args.out)
    return config_from_dict(d)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return str(x)


def _config_record(cfg: RunConfig) -> dict:
    # the output directory is excluded so that identical runs give identical files
    d = cfg.to_json()
    d["output"].pop("dir", None)
    return d


def _pressure_rows(p):
    g = p.grid
    rows = []
    for i, m in enumerate(g.m):
        for j, n in enumerate(g.n):
            if g.active[i, j] and (m, n) != (0, 0):
                rows.append((int(m), int(n), p.pi[i, j].real, p.pi[i, j].imag))
    return rows


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    g = cfg.make_grid()
    fs = cfg.forcing_spec()
    if cfg.initial.kind == "checkpoint":
        # resume: the run continues from the stored time
        start = load_checkpoint(cfg.initial.path, g)
        v0, t0 = start.v, start.t
    else:
        v0, t0 = cfg.initial_field(g), 0.0
    t1 = t0 + cfg.run_length
    dt, _ = adjust_dt(t1 - t0, cfg.time.dt)
    st = Stepper(g, dt, fs, cfl_warn=cfg.output.cfl_warn)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        state, ledger, traj = integrate(v0, t0, t1, dt, fs, stepper=st,
                                        sample_every=cfg.output.sample_every,
                                        snapshots=cfg.output.snapshots, monitors=True)
    emit_series(ledger, out / "ledger.csv")
    reports = {"apriori": apriori_bound_check(traj, fs), "l2_energy": l2_energy_bound_check(traj, fs)}
    if traj.snapshots:
        reports["h1_monitor"] = h1_monitor(traj)
        reports["gronwall"] = gronwall_weights(traj, fs).to_report()
        for i, v in enumerate(traj.snapshots):
            save_checkpoint(State(traj.times[i], v), out / "snapshots" / f"snap_{i:05d}.hpe")
    for name, rep in reports.items():
        rep.to_csv(out / f"{name}.csv")
    E, Dz = ledger.E, ledger.column("norm_dz_v_L2")
    poincare_ok = bool(np.all(np.sqrt(E) <= g.h * Dz * (1 + 1e-14) + 1e-300))
    save_checkpoint(state, out / "final.hpe")
    summary = {
        "t_end": state.t,
        "dt": ledger.metadata["dt"],
        "n_steps": ledger.metadata["n_steps"],
        "energy_balance_residual": energy_balance_residual(ledger),
        "poincare_all_samples": poincare_ok,
        "reports": {k: r.summary() for k, r in reports.items()},
        "warnings": ledger.metadata["warnings"] + sorted({str(w.message) for w in caught}),
        "config": _config_record(cfg),
    }
    _write_json(out / "summary.json", summary)
    ok = poincare_ok and all(r.passed for r in reports.values())
    print(f"simulate: t={state.t:g}, {'all checks passed' if ok else 'CHECK FAILED'}; outputs in {out}")
    return EXIT_OK


def cmd_periodic(cfg: RunConfig, out: Path) -> int:
    g = cfg.make_grid()
    fs = cfg.forcing_spec()
    a0 = cfg.initial_field(g)
    s = cfg.solver
    T = cfg.period
    try:
        if s.method == "picard":
            res = picard_solve(a0, T, cfg.time.dt, fs, tol=s.tol, maxit=s.maxit,
                               certify_samples=s.certify_samples, seed=cfg.seed)
        else:
            res = newton_shoot(a0, T, cfg.time.dt, fs, tol=s.tol, maxit=s.maxit,
                               krylov_dim=s.krylov_dim, certify_samples=s.certify_samples,
                               seed=cfg.seed)
    except NonConvergenceError as e:
        _write_json(out / "shoot.json", {"converged": False, "error": str(e), "residuals": e.residuals})
        print(f"periodic: {e}", file=sys.stderr)
        return EXIT_NONCONV
    if abs(res.dt - cfg.time.dt) > 0:
        log.info("dt adjusted from %.17g to %.17g to divide T=%g", cfg.time.dt, res.dt, T)
    rec = res.summary()
    rec["dt_requested"] = cfg.time.dt
    rec["dt_adjusted"] = res.dt != cfg.time.dt
    _write_json(out / "shoot.json", rec)
    emit_series(res.orbit_ledger, out / "orbit_ledger.csv")
    res.dissipation.to_csv(out / "dissipation.csv")
    save_checkpoint(State(0.0, res.a_star), out / "a_star.hpe")
    ok = res.orbit_check_passed and res.dissipation.passed
    print(f"periodic: {res.method} converged in {res.iterations} iterations, residual "
          f"{res.residuals[-1]:.3e}, orbit check {res.orbit_check:.3e} "
          f"({'pass' if res.orbit_check_passed else 'FAIL'}), dissipation "
          f"{'pass' if res.dissipation.passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NONCONV


def cmd_steady(cfg: RunConfig, out: Path) -> int:
    g = cfg.make_grid()
    fs = cfg.forcing_spec()
    if not fs.steady:
        raise ConfigError("steady mode needs steady forcing (all q = 0)", "forcing")
    try:
        res = steady_solve(fs, g, tol=min(cfg.solver.tol, 1e-10) if cfg.solver.tol else 1e-10,
                           maxit=cfg.solver.maxit, krylov_dim=max(cfg.solver.krylov_dim, 40))
    except NonConvergenceError as e:
        _write_json(out / "steady.json", {"converged": False, "error": str(e), "residuals": e.residuals})
        print(f"steady: {e}", file=sys.stderr)
        return EXIT_NONCONV
    _write_json(out / "steady.json", {"converged": True, **res.summary()})
    save_checkpoint(State(0.0, res.v), out / "v_steady.hpe")
    from .series import write_csv
    write_csv(out / "pressure.csv", ("m", "n", "pi_re", "pi_im"), _pressure_rows(res.pressure))
    print(f"steady: projected residual {res.residual:.3e}, fixed-point error {res.fixed_point_error:.3e}")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, out: Path) -> int:
    fine_res = cfg.compare.fine or [cfg.grid.M, cfg.grid.N, cfg.grid.K]
    gf = make_grid(*fine_res, cfg.grid.h)
    fs = cfg.forcing_spec()
    v0 = cfg.initial_field(gf)
    t_end = cfg.run_length
    from .diagnostics import weak_strong_compare

    fine = TwinRun(gf, cfg.time.dt, t_end, fs, v0, cfg.output.sample_every)
    sups = []
    for r in cfg.compare.ladder:
        gc = make_grid(*r, cfg.grid.h)
        res = weak_strong_compare(replace(fine, grid=gc), fine)
        tag = "x".join(map(str, r))
        res.to_csv(out / f"compare_{tag}.csv")
        sups.append({**res.summary(), "coarse": list(r)})
    decreasing = all(a["sup_sigma"] > b["sup_sigma"] for a, b in zip(sups, sups[1:]))
    _write_json(out / "compare.json", {"fine": fine_res, "ladder": sups,
                                       "strictly_decreasing": decreasing})
    for s in sups:
        print(f"compare: coarse {s['coarse']} vs fine {fine_res}: sup sigma {s['sup_sigma']:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# selftest


def selftest(verbose: bool = True) -> bool:
    """Quick invariant suite on a small grid; prints one line per check."""
    g = make_grid(8, 8, 6)
    rng = np.random.default_rng(12345)
    results = []

    def check(name, ok, detail=""):
        results.append(bool(ok))
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")

    vs = [project(random_field(g, rng)) for _ in range(5)]
    worst = max(abs(inner_l2(advect(v, v), v)) / (norm_l2(v) * norm_grad_sq(v)) for v in vs)
    check("skew-symmetry", worst <= 1e-12, f"max rel {worst:.2e}")
    phis = [random_field(g, rng) for _ in range(5)]
    worst = max(abs(inner_l2(advect(v, p), v) + inner_l2(advect(v, v), p))
                / (norm_l2(v) * norm_grad_sq(v) ** 0.5 * norm_grad_sq(p) ** 0.5 + 1e-300)
                for v, p in zip(vs, phis))
    check("duality", worst <= 1e-12, f"max rel {worst:.2e}")
    u = random_field(g, rng)
    pu = project(u)
    check("projector", norm_l2(project(pu) - pu) <= 1e-13 * norm_l2(u)
          and constraint_residual(pu) <= 1e-13 * norm_l2(u))
    w = compute_w(vs[0])
    top, bottom = np.abs(w.column(0.0)).max(), np.abs(w.column(-g.h)).max()
    check("w endpoints", top <= 1e-13 and bottom <= 1e-12, f"{top:.1e} {bottom:.1e}")
    check("poincare", all(poincare_check(v)[2] for v in vs))
    with tempfile.TemporaryDirectory() as d:
        st = State(0.25, vs[1])
        save_checkpoint(st, Path(d) / "c.hpe")
        back = load_checkpoint(Path(d) / "c.hpe", g)
        check("checkpoint round trip", back.t == st.t and np.array_equal(back.v.coef, st.v.coef))
    from .dynamics import preset

    fs = preset("channel_harmonic")
    _, led, _ = integrate(vs[2], 0.0, 0.05, 1e-3, None)
    check("unforced energy decay", bool(np.all(np.diff(led.E) <= 1e-10 * led.E[:-1])))
    r1 = energy_balance_residual(integrate(vs[2], 0.0, 0.1, 2e-3, fs)[1])
    r2 = energy_balance_residual(integrate(vs[2], 0.0, 0.1, 1e-3, fs)[1])
    order = math.log2(r1 / r2)
    check("energy balance order", 1.7 <= order <= 2.3, f"order {order:.2f}")
    fs_short = replace(fs, T=0.05)
    a = vs[3]
    s2 = poincare_map(poincare_map(a, 0.05, 1e-3, fs_short), 0.05, 1e-3, fs_short)
    direct, _, _ = integrate(a, 0.0, 0.1, 1e-3, fs_short, sample_every=1000)
    check("semigroup bit-exact", np.array_equal(s2.coef, direct.v.coef))
    return all(results)


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        return EXIT_OK if selftest() else EXIT_SELFTEST
    try:
        cfg = _load(args)
    except (ConfigError, CheckpointError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output.dir)
    cmd = {"simulate": cmd_simulate, "periodic": cmd_periodic, "steady": cmd_steady,
           "compare": cmd_compare}[args.command]
    try:
        return cmd(cfg, out)
    except (ConfigError, CheckpointError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as e:
        print(f"blow-up: {e}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
