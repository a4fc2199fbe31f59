"""IMEX time stepping of the constrained Galerkin system and the energy ledger.

Each step is Crank-Nicolson for diffusion and Heun (explicit trapezoid) for
advection and forcing:

    predictor  (1 + dt L/2) a*      + g* cbar e = (1 - dt L/2) a_n + dt F(a_n, t_n)
    corrector  (1 + dt L/2) a_{n+1} + g  cbar e = (1 - dt L/2) a_n + dt/2 (F(a_n, t_n) + F(a*, t_{n+1}))

with F = P f - N(a).  Both implicit stages are bordered solves per
wavevector, so the constraint holds exactly after every step and the
multiplier g gives the half-step pressure.  The scheme is one-step: the
state is (t, v) alone, so the time-T map is a genuine map of v and
restarting from a checkpoint reproduces an uninterrupted run bit for bit.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import Grid, SpectralField, coef_to_levels, norm_l2, vertical_apply
from .constraint import (
    PressureField,
    constraint_data,
    constraint_residual,
    pressure_field,
    project,
)
from .dynamics import CompiledForcing, ForcingSpec, advect_coef, compile_forcing

__all__ = [
    "State",
    "EnergyLedger",
    "Trajectory",
    "Stepper",
    "BlowUpError",
    "CFLWarning",
    "ConstraintWarning",
    "step",
    "integrate",
    "energy_balance_residual",
    "adjust_dt",
]

log = logging.getLogger(__name__)


class BlowUpError(FloatingPointError):
    """Non-finite or overflowing coefficients during integration."""

    def __init__(self, t: float, mode: tuple):
        super().__init__(f"numerical blow-up at t={t:.6g}, largest mode (c, m, n, k)={mode}")
        self.t = t
        self.mode = mode


class CFLWarning(UserWarning):
    pass


class ConstraintWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class State:
    t: float
    v: SpectralField
    pressure: PressureField | None = None


LEDGER_COLUMNS = (
    "t",
    "norm_v_L2_sq",
    "norm_grad_v_L2_sq",
    "f_dot_v",
    "norm_dz_v_L2",
    "norm_grad_H_vbar_L2G",
    "norm_vbar_H1G",
    "norm_vtilde_L4",
)


@dataclass
class EnergyLedger:
    """Sampled E = |v|^2, D = |grad v|^2, W = (f, v) plus monitor norms.

    ``norm_vtilde_L4`` is NaN unless the run asked for monitors.
    """

    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, t: float, v: SpectralField, f_coef: np.ndarray | None,
            vtilde_l4: float = math.nan) -> None:
        g = v.grid
        a = v.coef
        p = np.abs(a) ** 2
        E = float(p.sum())
        D = float(np.sum(g.lam * p))
        W = float(np.vdot(f_coef.ravel(), a.ravel()).real) if f_coef is not None else 0.0
        dz = math.sqrt(float(np.sum(g.mu**2 * p)))
        vbar = a @ g.cbar
        pb = np.abs(vbar) ** 2
        gvb = math.sqrt(float(np.sum(g.kh2 * pb)))
        vb_h1 = math.sqrt(float(np.sum((1.0 + g.kh2) * pb)))
        self.rows.append((float(t), E, D, W, dz, gvb, vb_h1, float(vtilde_l4)))

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        i = LEDGER_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    @property
    def E(self) -> np.ndarray:
        return self.column("norm_v_L2_sq")

    @property
    def D(self) -> np.ndarray:
        return self.column("norm_grad_v_L2_sq")

    @property
    def W(self) -> np.ndarray:
        return self.column("f_dot_v")

    def as_array(self) -> np.ndarray:
        return np.array(self.rows, dtype=float).reshape(-1, len(LEDGER_COLUMNS))


@dataclass
class Trajectory:
    """Sample times with optional field and pressure snapshots."""

    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    pressures: list = field(default_factory=list)
    ledger: EnergyLedger | None = None
    forcing: ForcingSpec | None = None
    dt: float = math.nan

    @property
    def grid(self) -> Grid | None:
        return self.snapshots[0].grid if self.snapshots else None


def energy_balance_residual(ledger: EnergyLedger) -> float:
    """sum_n |r_n| dt, r_n = dE/dt + 2 D_{n+1/2} - 2 W_{n+1/2} (trapezoidal midpoints)."""
    if len(ledger) < 2:
        raise ValueError("energy balance needs at least two ledger rows")
    t, E, D, W = ledger.t, ledger.E, ledger.D, ledger.W
    dt = np.diff(t)
    r = np.diff(E) / dt + (D[1:] + D[:-1]) - (W[1:] + W[:-1])
    return float(np.sum(np.abs(r) * dt))


def adjust_dt(T: float, dt: float) -> tuple[float, int]:
    """Largest step <= dt dividing T into an integer number of steps."""
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    n = T / dt
    nr = round(n)
    if nr >= 1 and abs(n - nr) <= 1e-9 * max(1.0, n):
        return T / nr, nr
    n_steps = math.ceil(n)
    new = T / n_steps
    log.info("dt adjusted from %.17g to %.17g so that %d steps span %.17g", dt, new, n_steps, T)
    return new, n_steps


class Stepper:
    """Reusable IMEX stepper for a fixed grid, step size and forcing.

    Step times are ``n * dt`` for an integer step counter ``n``; for periodic
    forcing with T/dt integral the forcing is evaluated at ``(n mod T/dt) dt``
    so every period sees bit-identical forcing.
    """

    def __init__(self, grid: Grid, dt: float, forcing: ForcingSpec | CompiledForcing | None = None,
                 nonlinear: bool = True, cfl: float = 0.5, cfl_warn: bool = True):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.grid = grid
        self.dt = float(dt)
        if forcing is None:
            forcing = ForcingSpec((), T=None)
        self.forcing = forcing if isinstance(forcing, CompiledForcing) else compile_forcing(forcing, grid)
        self.nonlinear = nonlinear
        self.cfl = cfl
        self.cfl_warn = cfl_warn
        self._cfl_warned = False
        self._fcache = (None, None)
        self.dplus = 1.0 + 0.5 * self.dt * grid.lam
        self.dminus = 1.0 - 0.5 * self.dt * grid.lam
        cd = constraint_data(grid)
        self._ehat = cd.ehat
        self._w = cd.cbar / self.dplus
        self._den = (cd.cbar * self._w).sum(axis=-1)
        self._corr = cd.cbar * cd.ehat[..., None]  # (2, M, N, K)
        T = self.forcing.spec.T
        self.period_steps = None
        if T is not None and not self.forcing.spec.steady:
            n = T / self.dt
            if abs(n - round(n)) <= 1e-9 * max(1.0, n):
                self.period_steps = int(round(n))

    # -- pieces -------------------------------------------------------------

    def forcing_time(self, n: int) -> float:
        if self.period_steps:
            n %= self.period_steps
        return n * self.dt

    def forcing_coef(self, n: int) -> np.ndarray | None:
        if self.forcing.is_zero:
            return None
        tf = self.forcing_time(n)
        if self._fcache[0] != tf:
            self._fcache = (tf, self.forcing.coef(tf))
        return self._fcache[1]

    def explicit(self, a: np.ndarray, f: np.ndarray | None) -> np.ndarray:
        if self.nonlinear:
            F = advect_coef(a, a, self.grid)
            np.negative(F, out=F)
            if f is not None:
                F += f
            return F
        if f is None:
            return np.zeros(a.shape, dtype=complex)
        return np.broadcast_to(f, a.shape).copy()

    def implicit(self, rhs: np.ndarray):
        e = self._ehat
        par = e[0][..., None] * rhs[..., 0, :, :, :] + e[1][..., None] * rhs[..., 1, :, :, :]
        gamma = (par * self._w).sum(axis=-1) / self._den
        return (rhs - gamma[..., None, :, :, None] * self._corr) / self.dplus, gamma

    def advance(self, a: np.ndarray, n: int):
        """One step from a_n at step index n.  Returns (a_{n+1}, gamma, f_n)."""
        f0 = self.forcing_coef(n)
        f1 = self.forcing_coef(n + 1)
        F0 = self.explicit(a, f0)
        base = self.dminus * a
        a1, _ = self.implicit(base + self.dt * F0)
        F1 = self.explicit(a1, f1)
        a2, gamma = self.implicit(base + (0.5 * self.dt) * (F0 + F1))
        return a2, gamma, f0

    def run(self, a: np.ndarray, n0: int, n_steps: int) -> tuple[np.ndarray, np.ndarray | None]:
        """Advance ``n_steps`` from step index ``n0`` without bookkeeping.

        ``a`` may carry leading batch axes.  Returns (a, last multiplier).
        """
        gamma = None
        for n in range(n0, n0 + n_steps):
            a, gamma, _ = self.advance(a, n)
            self.check_finite(a, (n + 1) * self.dt)
        return a, gamma

    def pressure(self, gamma: np.ndarray) -> PressureField:
        return pressure_field(gamma / self.dt, self.grid)

    def check_finite(self, a: np.ndarray, t: float) -> None:
        amax = np.max(np.abs(a))
        if not np.isfinite(amax) or amax > 1e150:
            mag = np.where(np.isfinite(a), np.abs(a), np.inf).reshape((-1,) + a.shape[-4:]).max(axis=0)
            c, i, j, k = np.unravel_index(int(np.argmax(mag)), mag.shape)
            raise BlowUpError(t, (int(c), int(self.grid.m[i]), int(self.grid.n[j]), int(k)))

    def check_cfl(self, a: np.ndarray) -> float:
        """Advisory CFL number dt * max|v| / dx on the collocation grid."""
        g = self.grid
        lev = coef_to_levels(a, g)
        phys = vertical_apply(g.S, lev)
        vmax = float(np.max(np.hypot(phys[..., 0, :, :, :], phys[..., 1, :, :, :])))
        dx = 1.0 / max(g.M, g.N)
        c = self.dt * vmax / dx
        if self.cfl_warn and c > self.cfl and not self._cfl_warned:
            self._cfl_warned = True
            warnings.warn(f"CFL number {c:.3g} exceeds {self.cfl} (max|v|={vmax:.3g}, dt={self.dt:g})",
                          CFLWarning, stacklevel=3)
        return c


def _start_index(t0: float, dt: float) -> tuple[int, float]:
    """Global step index of t0 and the time origin used for t = origin + n dt."""
    n0 = round(t0 / dt)
    if abs(t0 - n0 * dt) <= 1e-9 * max(1.0, abs(t0)):
        return int(n0), 0.0
    return 0, t0


def step(s: State, dt: float, fs: ForcingSpec | None = None, nonlinear: bool = True) -> State:
    """Advance one step (convenience wrapper; use :class:`Stepper` in loops)."""
    st = Stepper(s.v.grid, dt, fs, nonlinear=nonlinear)
    n0, origin = _start_index(s.t, dt)
    st.check_cfl(s.v.coef)
    a, gamma, _ = st.advance(s.v.coef, n0)
    t = origin + (n0 + 1) * dt
    st.check_finite(a, t)
    return State(t, SpectralField(a, s.v.grid), st.pressure(gamma))


def integrate(v0: SpectralField, t0: float, t1: float, dt: float,
              fs: ForcingSpec | CompiledForcing | None = None, sample_every: int = 1,
              snapshots: bool = False, nonlinear: bool = True, monitors: bool = False,
              stepper: Stepper | None = None):
    """Integrate from t0 to t1 with fixed step.

    ``dt`` is reduced if needed so an integer number of steps spans [t0, t1].
    Returns ``(state, ledger, trajectory)``; the ledger is sampled every
    ``sample_every`` steps (and always at t1).  ``monitors`` adds the L4 norm
    of the baroclinic part to each ledger row.
    """
    if not t1 > t0:
        raise ValueError("integrate needs t1 > t0")
    g = v0.grid
    dt, n_steps = adjust_dt(t1 - t0, dt)
    st = stepper if stepper is not None and stepper.dt == dt else Stepper(g, dt, fs, nonlinear)
    meta = {"dt": dt, "n_steps": n_steps, "grid": list(g.key), "nonlinear": st.nonlinear,
            "forcing": st.forcing.spec.name, "warnings": []}
    if st.forcing.truncated:
        meta["warnings"].append(f"forcing truncated: {st.forcing.truncated}")
    a = v0.coef
    nv = norm_l2(v0)
    if constraint_residual(v0) > 1e-12 * max(nv, 1e-300) * 2 * np.pi * max(g.M, g.N):
        warnings.warn("initial field violates div_H vbar = 0; projecting", ConstraintWarning,
                      stacklevel=2)
        meta["warnings"].append("initial field projected onto the constraint")
        a = project(v0).coef
    n0, origin = _start_index(t0, dt)

    from .diagnostics import vtilde_l4_norm  # local: diagnostics imports this module

    ledger = EnergyLedger(metadata=meta)
    traj = Trajectory(ledger=ledger, forcing=st.forcing.spec, dt=dt)

    def sample(n, a, f, gamma):
        t = origin + n * dt
        v = SpectralField(a, g)
        l4 = vtilde_l4_norm(v) if monitors else math.nan
        ledger.add(t, v, f, l4)
        traj.times.append(t)
        if snapshots:
            traj.snapshots.append(v)
            traj.pressures.append(st.pressure(gamma) if gamma is not None else None)

    cfl_every = max(1, n_steps // 20)
    st.check_cfl(a)
    gamma = None
    for j in range(n_steps):
        n = n0 + j
        a_new, gamma_new, f = st.advance(a, n)
        if j % sample_every == 0:
            sample(n, a, f, gamma)
        a, gamma = a_new, gamma_new
        st.check_finite(a, origin + (n + 1) * dt)
        if (j + 1) % cfl_every == 0:
            st.check_cfl(a)
    n_end = n0 + n_steps
    sample(n_end, a, st.forcing_coef(n_end), gamma)
    state = State(origin + n_end * dt, SpectralField(a, g), st.pressure(gamma))
    if st._cfl_warned:
        meta["warnings"].append("CFL advisory exceeded")
    return state, ledger, traj
