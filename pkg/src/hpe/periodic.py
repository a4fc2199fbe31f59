"""Time-periodic and steady solutions as fixed points.

The Poincare map S sends an initial field a to the solution at time T under
T-periodic forcing.  Its fixed points are the T-periodic orbits.  They are
found by Picard iteration (the ball-invariance argument made computational)
or by matrix-free Newton-Krylov shooting.  Steady states solve the
stationary Galerkin system directly.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .basis import Grid, SpectralField, norm_l2, random_field
from .constraint import PressureField, bordered_solve_field, constraint_data, pressure_field, project_coef
from .diagnostics import MonitorReport, dissipation_bound_check, problem_scale, slack_factor
from .dynamics import CompiledForcing, ForcingSpec, advect_coef, compile_forcing
from .integrator import ConstraintWarning, EnergyLedger, Stepper, adjust_dt, integrate

__all__ = [
    "ShootResult",
    "SteadyResult",
    "BallCertificate",
    "NonConvergenceError",
    "SingularJacobianWarning",
    "poincare_map",
    "ball_radius",
    "certify_ball",
    "picard_solve",
    "newton_shoot",
    "steady_solve",
    "get_stepper",
]

log = logging.getLogger(__name__)


class NonConvergenceError(RuntimeError):
    """Raised when a fixed-point search exhausts its budget; carries the history."""

    def __init__(self, msg: str, residuals: list, result=None):
        super().__init__(msg)
        self.residuals = list(residuals)
        self.result = result


class SingularJacobianWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# the map S


_STEPPERS: dict = {}


def get_stepper(grid: Grid, dt: float, fs: ForcingSpec | None, nonlinear: bool = True) -> Stepper:
    """Stepper cached per (grid, dt, forcing, nonlinear switch)."""
    fs = fs if fs is not None else ForcingSpec()
    key = (grid.key, float(dt), fs, nonlinear)
    st = _STEPPERS.get(key)
    if st is None or not st.grid.same_as(grid):
        if len(_STEPPERS) > 32:
            _STEPPERS.clear()
        st = Stepper(grid, dt, fs, nonlinear=nonlinear, cfl_warn=False)
        _STEPPERS[key] = st
    return st


def _period(fs: ForcingSpec, T: float | None) -> float:
    if T is None:
        T = fs.T
    if T is None:
        raise ValueError("steady forcing needs an explicit period T")
    if fs.T is not None and not fs.steady and abs(T - fs.T) > 1e-12 * fs.T:
        raise ValueError(f"map period {T} differs from the forcing period {fs.T}")
    return float(T)


def _flow_coef(a: np.ndarray, grid: Grid, T: float, dt: float, fs, nonlinear=True) -> np.ndarray:
    dt, n = adjust_dt(T, dt)
    a_T, _ = get_stepper(grid, dt, fs, nonlinear).run(a, 0, n)
    return a_T


def poincare_map(a: SpectralField, T: float | None, dt: float, fs: ForcingSpec | None,
                 nonlinear: bool = True) -> SpectralField:
    """S(a) = v(T) for the solution started from v(0) = a.

    ``dt`` is reduced to the nearest divisor of T.
    """
    fs = fs if fs is not None else ForcingSpec()
    T = _period(fs, T)
    return SpectralField(_flow_coef(a.coef, a.grid, T, dt, fs, nonlinear), a.grid)


# ---------------------------------------------------------------------------
# Brouwer ball


_GL = np.polynomial.legendre.leggauss(16)


def _norm_fn(fs: ForcingSpec, grid: Grid | None, h: float):
    if grid is None:
        from .basis import make_grid

        mm, nn, kk = fs.max_wavenumbers()
        grid = make_grid(2 * mm + 2, 2 * nn + 2, max(kk + 1, 64), h)
    return compile_forcing(fs, grid, warn=False).norm


def ball_radius(fs: ForcingSpec, T: float | None = None, h: float = 1.0,
                grid: Grid | None = None, panels: int = 64) -> float:
    """R = 2 int_0^T exp(2(tau - T)/h^2) ||f|| dtau / (1 - exp(-2T/h^2)).

    ``||f||`` is the norm of the basis projection on ``grid`` (a grid holding
    every forced mode when omitted).  Composite 16-point Gauss-Legendre.
    """
    T = _period(fs, T)
    if grid is not None and grid.h != h:
        h = grid.h
    norm = _norm_fn(fs, grid, h)
    x, w = _GL
    edges = np.linspace(0.0, T, panels + 1)
    rate = 2.0 / h**2
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        tau = 0.5 * (a + b) + 0.5 * (b - a) * x
        fn = np.array([norm(s) for s in tau])
        total += 0.5 * (b - a) * float(w @ (np.exp(rate * (tau - T)) * fn))
    return 2.0 * total / -math.expm1(-rate * T)


@dataclass
class BallCertificate:
    certified: bool
    R: float
    ratios: list  # ||S(a)|| / R per sample
    worst_ratio: float
    slack: float
    offending: list = field(default_factory=list)  # sample indices that failed
    samples: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.certified


def certify_ball(fs: ForcingSpec, T: float | None, dt: float, R: float, samples: int = 20,
                 grid: Grid | None = None, seed: int = 0, c: float = 10.0, decay: float = 0.5,
                 batch: int = 10) -> BallCertificate:
    """Check ||S(a)|| <= R (1 + c dt^2 scale) for random constrained a with ||a|| = R.

    Samples are integrated ``batch`` at a time.  The offending samples are
    kept in the certificate.
    """
    if grid is None:
        raise ValueError("certify_ball needs the simulation grid")
    T = _period(fs, T)
    dt_adj, _ = adjust_dt(T, dt)
    sl = slack_factor(dt_adj, problem_scale(fs, grid), c)
    rng = np.random.default_rng(seed)
    a = []
    for _ in range(samples):
        v = random_field(grid, rng, decay=decay).coef
        v = project_coef(v, grid)
        a.append(v * (R / np.linalg.norm(v)))
    a = np.array(a)
    ratios = []
    for s in range(0, samples, batch):
        out = _flow_coef(a[s:s + batch], grid, T, dt, fs)
        nrm = np.sqrt(np.sum(np.abs(out) ** 2, axis=(-4, -3, -2, -1)))
        ratios.extend((nrm / R if R > 0 else np.zeros_like(nrm)).tolist())
    bad = [i for i, r in enumerate(ratios) if r > sl]
    worst = max(ratios) if ratios else 0.0
    cert = BallCertificate(not bad, R, ratios, worst, sl, bad, [a[i] for i in bad])
    if bad:
        log.warning("ball R=%.6g not certified: %d of %d samples leave it (worst ratio %.6g)",
                    R, len(bad), samples, worst)
    return cert


# ---------------------------------------------------------------------------
# shooting


@dataclass
class ShootResult:
    a_star: SpectralField
    residuals: list
    iterations: int
    ball_radius: float
    ball_certified: bool | None
    orbit_ledger: EnergyLedger | None
    method: str = ""
    converged: bool = False
    T: float = math.nan
    dt: float = math.nan
    tol: float = math.nan
    orbit_check: float = math.nan
    orbit_check_passed: bool = False
    in_ball: bool = False
    dissipation: MonitorReport | None = None
    map_evaluations: int = 0
    inner_iterations: list = field(default_factory=list)

    def summary(self) -> dict:
        d = {
            "method": self.method,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residuals[-1] if self.residuals else None,
            "residuals": list(self.residuals),
            "tol": self.tol,
            "T": self.T,
            "dt": self.dt,
            "ball_radius": self.ball_radius,
            "ball_certified": self.ball_certified,
            "in_ball": self.in_ball,
            "norm_a_star": norm_l2(self.a_star),
            "orbit_check": self.orbit_check,
            "orbit_check_passed": self.orbit_check_passed,
            "map_evaluations": self.map_evaluations,
            "inner_iterations": list(self.inner_iterations),
            "grid": list(self.a_star.grid.key),
        }
        if self.orbit_ledger is not None and len(self.orbit_ledger):
            E = self.orbit_ledger.E
            d["orbit_energy"] = {"min": float(E.min()), "max": float(E.max()), "mean": float(E.mean())}
        if self.dissipation is not None:
            d["dissipation_check"] = self.dissipation.summary()
            d["dissipation_check"]["row"] = dict(zip(self.dissipation.columns,
                                                     self.dissipation.rows[0]))
        return d

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.summary(), indent=2, default=float) + "\n")
        return path


def _verify_orbit(res: ShootResult, fs: ForcingSpec, certify_samples: int, seed: int) -> ShootResult:
    """Integrate [0, 2T] from a*, compare v(2T) with v(T), check dissipation."""
    a = res.a_star
    g = a.grid
    T, dt = res.T, res.dt
    st = get_stepper(g, dt, fs)
    with warnings.catch_warnings():
        # a* is projected by construction; for a* near zero the relative
        # constraint test only sees round-off from larger intermediate states
        warnings.simplefilter("ignore", ConstraintWarning)
        state, ledger, _ = integrate(a, 0.0, T, dt, fs, stepper=st)
    v2T = SpectralField(st.run(state.v.coef, int(round(T / dt)), int(round(T / dt)))[0], g)
    res.orbit_check = norm_l2(v2T - state.v)
    res.orbit_check_passed = res.orbit_check <= 2 * res.tol
    res.orbit_ledger = ledger
    res.map_evaluations += 2
    res.dissipation = dissipation_bound_check(ledger, fs, g, dt)
    res.ball_radius = ball_radius(fs, T, g.h, grid=g)
    res.in_ball = norm_l2(a) <= res.ball_radius * res.dissipation.slack
    if certify_samples:
        res.ball_certified = bool(certify_ball(fs, T, dt, res.ball_radius, certify_samples,
                                               grid=g, seed=seed))
        res.map_evaluations += certify_samples
    return res


def picard_solve(a0: SpectralField, T: float | None, dt: float, fs: ForcingSpec,
                 tol: float = 1e-9, maxit: int = 200, verify: bool = True,
                 certify_samples: int = 0, seed: int = 0) -> ShootResult:
    """Iterate a <- S(a) until ||S(a) - a|| <= tol.

    The returned a* is the last iterate whose residual met the tolerance, so
    restarting from a converged a* costs zero iterations.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    T = _period(fs, T)
    dt, _ = adjust_dt(T, dt)
    g = a0.grid
    a = project_coef(a0.coef, g)
    residuals = []
    evals = 0
    for it in range(maxit + 1):
        Sa = _flow_coef(a, g, T, dt, fs)
        evals += 1
        r = float(np.linalg.norm(Sa - a))
        residuals.append(r)
        log.info("picard %d: residual %.3e", it, r)
        if r <= tol:
            res = ShootResult(SpectralField(a, g), residuals, it, math.nan, None, None,
                              method="picard", converged=True, T=T, dt=dt, tol=tol,
                              map_evaluations=evals)
            return _verify_orbit(res, fs, certify_samples, seed) if verify else res
        if not math.isfinite(r):
            break
        if it < maxit:
            a = Sa
    res = ShootResult(SpectralField(a, g), residuals, maxit, math.nan, None, None,
                      method="picard", converged=False, T=T, dt=dt, tol=tol, map_evaluations=evals)
    raise NonConvergenceError(f"Picard iteration did not reach {tol:g} in {maxit} iterations "
                              f"(last residual {residuals[-1]:.3e})", residuals, res)


def _as_real(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x.real.ravel(), x.imag.ravel()])


def _as_complex(y: np.ndarray, shape) -> np.ndarray:
    n = y.size // 2
    return (y[:n] + 1j * y[n:]).reshape(shape)


def newton_shoot(a0: SpectralField, T: float | None, dt: float, fs: ForcingSpec,
                 tol: float = 1e-9, maxit: int = 15, krylov_dim: int = 20,
                 eps_rule: float | None = None, verify: bool = True,
                 certify_samples: int = 0, seed: int = 0, max_halvings: int = 8) -> ShootResult:
    """Inexact Newton on F(a) = S(a) - a with restarted GMRES inner solves.

    Jacobian-vector products are forward differences (S(a + e q) - S(a)) / e
    with e = sqrt(machine eps) (1 + |a|) / |q|, or ``eps_rule`` in place of
    sqrt(machine eps).  The map is only real-linear in the complex
    coefficients, so the inner solve works on stacked real and imaginary parts.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    T = _period(fs, T)
    dt, _ = adjust_dt(T, dt)
    g = a0.grid
    shape = g.shape
    root_eps = math.sqrt(np.finfo(float).eps) if eps_rule is None else eps_rule
    a = project_coef(a0.coef, g)
    evals = 0

    def S(x):
        nonlocal evals
        evals += 1
        return _flow_coef(x, g, T, dt, fs)

    Sa = S(a)
    F = Sa - a
    r = float(np.linalg.norm(F))
    residuals = [r]
    inner = []
    r_prev = None
    for it in range(maxit + 1):
        log.info("newton %d: residual %.3e", it, r)
        if r <= tol:
            res = ShootResult(SpectralField(a, g), residuals, it, math.nan, None, None,
                              method="newton", converged=True, T=T, dt=dt, tol=tol,
                              map_evaluations=evals, inner_iterations=inner)
            return _verify_orbit(res, fs, certify_samples, seed) if verify else res
        if it == maxit or not math.isfinite(r):
            break
        na = float(np.linalg.norm(a))

        def matvec(y, a=a, Sa=Sa, na=na):
            q = _as_complex(y, shape)
            nq = float(np.linalg.norm(q))
            if nq == 0.0:
                return np.zeros_like(y)
            e = root_eps * (1.0 + na) / nq
            return _as_real((S(a + e * q) - Sa) / e - q)

        n_real = 2 * a.size
        A = LinearOperator((n_real, n_real), matvec=matvec, dtype=float)
        # Eisenstat-Walker forcing term, floored so the inner solve is not
        # asked for more than the finite-difference products can deliver
        eta = 0.1 if r_prev is None else min(0.1, 0.9 * (r / r_prev) ** 2)
        eta = max(eta, 0.5 * tol / r, 1e-6)
        count = [0]
        y, info = gmres(A, -_as_real(F), rtol=eta, atol=0.0, restart=krylov_dim,
                        maxiter=4, callback=lambda _: count.__setitem__(0, count[0] + 1),
                        callback_type="pr_norm")
        inner.append(count[0])
        lin_res = float(np.linalg.norm(A.matvec(y) + _as_real(F))) if info else 0.0
        if info:
            evals += 1
            if lin_res > 0.5 * r:
                warnings.warn(f"GMRES stagnated at Newton step {it} (linear residual "
                              f"{lin_res:.3e} vs {r:.3e}); Jacobian may be singular",
                              SingularJacobianWarning, stacklevel=2)
        delta = project_coef(_as_complex(y, shape), g)
        step = 1.0
        for _ in range(max_halvings + 1):
            a_new = a + step * delta
            Sa_new = S(a_new)
            F_new = Sa_new - a_new
            r_new = float(np.linalg.norm(F_new))
            if r_new < r:
                break
            step *= 0.5
        else:
            log.warning("line search failed to decrease the residual at Newton step %d", it)
        r_prev = r
        a, Sa, F, r = a_new, Sa_new, F_new, r_new
        residuals.append(r)
    res = ShootResult(SpectralField(a, g), residuals, len(residuals) - 1, math.nan, None, None,
                      method="newton", converged=False, T=T, dt=dt, tol=tol,
                      map_evaluations=evals, inner_iterations=inner)
    raise NonConvergenceError(f"Newton shooting did not reach {tol:g} in {maxit} iterations "
                              f"(last residual {residuals[-1]:.3e})", residuals, res)


# ---------------------------------------------------------------------------
# steady states


@dataclass
class SteadyResult:
    v: SpectralField
    pressure: PressureField
    residual: float
    fixed_point_error: float
    newton_iterations: int
    residuals: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.v, self.pressure))

    def summary(self) -> dict:
        return {"residual": self.residual, "fixed_point_error": self.fixed_point_error,
                "newton_iterations": self.newton_iterations, "residuals": list(self.residuals),
                "norm_v": norm_l2(self.v), "grid": list(self.v.grid.key)}


def _stationary_residual(a: np.ndarray, f: np.ndarray, g: Grid):
    """r = f - N(a) - L a split into its constrained part and the multiplier."""
    r = f - advect_coef(a, a, g) - g.lam * a
    rp = project_coef(r, g)
    cd = constraint_data(g)
    # the removed part is gamma * cbar * e per wavevector
    par = (cd.ehat[..., None] * (r - rp)).sum(axis=0) @ cd.cbar
    gamma = par / (cd.cbar @ cd.cbar)
    return rp, gamma


def steady_solve(fs: ForcingSpec, grid: Grid, tol: float = 1e-10, a0: SpectralField | None = None,
                 pseudo_time: float | None = None, pseudo_dt: float = 1e-2, maxit: int = 30,
                 krylov_dim: int = 40, T_check: float = 1.0, dt_check: float = 1e-3) -> SteadyResult:
    """Steady state of the constrained Galerkin system.

    Pseudo-time integration brings the state near stationarity, then Newton
    on G(a) = a - L^{-1}_c (f - N(a)) (L^{-1}_c the constrained Stokes solve)
    drives the projected residual |P(f - N(a) - L a)| below ``tol``.  The
    result is then checked as a fixed point of the time-T map.
    """
    if not fs.steady:
        raise ValueError("steady_solve needs steady forcing")
    fsteady = ForcingSpec(fs.modes, T=None, name=fs.name)
    cf = compile_forcing(fsteady, grid)
    f = cf.coef(0.0) if not cf.is_zero else np.zeros(grid.shape, dtype=complex)
    g = grid
    shape = g.shape
    a = project_coef(a0.coef, g) if a0 is not None else np.zeros(shape, dtype=complex)
    if pseudo_time is None:
        pseudo_time = 5.0 / g.lam_min()
    if pseudo_time > 0 and not cf.is_zero:
        st = Stepper(g, pseudo_dt, fsteady, cfl_warn=False)
        a, _ = st.run(a, 0, max(1, int(round(pseudo_time / pseudo_dt))))

    def stokes(rhs):
        return bordered_solve_field(g.lam, rhs, g)[0]

    residuals = []
    rp, gamma = _stationary_residual(a, f, g)
    rn = float(np.linalg.norm(rp))
    residuals.append(rn)
    it = 0
    while rn > tol:
        if it >= maxit:
            raise NonConvergenceError(f"steady Newton did not reach {tol:g} in {maxit} iterations",
                                      residuals)
        G = a - stokes(f - advect_coef(a, a, g))

        def matvec(y, a=a):
            q = _as_complex(y, shape)
            dn = advect_coef(a, q, g) + advect_coef(q, a, g)
            return _as_real(q + stokes(dn))

        n_real = 2 * a.size
        A = LinearOperator((n_real, n_real), matvec=matvec, dtype=float)
        y, info = gmres(A, -_as_real(G), rtol=1e-12, atol=0.0, restart=krylov_dim, maxiter=20)
        a = project_coef(a + _as_complex(y, shape), g)
        rp, gamma = _stationary_residual(a, f, g)
        rn = float(np.linalg.norm(rp))
        residuals.append(rn)
        it += 1
        log.info("steady newton %d: projected residual %.3e", it, rn)
    v = SpectralField(a, g)
    # the pressure gradient is the part of f - N - L a that the constraint removes
    p = pressure_field(gamma, g)
    Sv = _flow_coef(a, g, T_check, dt_check, fsteady)
    fp = float(np.linalg.norm(Sv - a))
    return SteadyResult(v, p, rn, fp, it, residuals)
