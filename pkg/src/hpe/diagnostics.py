"""Computable estimates: Poincare inequality, a priori bounds, monitors, twin runs.

Inequalities whose constants are known (Poincare, the exponential bound,
the L2 energy bound, the periodic dissipation bound) are asserted with a
discretisation slack ``1 + c dt^2 scale``.  Estimates with unknown universal
constants are only reported, as time series and empirical ratios.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .basis import (
    BarotropicField,
    Grid,
    SpectralField,
    fft_workers,
    norm_l2,
    regrid,
    vertical_average,
)
from .constraint import project
from .dynamics import CompiledForcing, ForcingSpec, compile_forcing
from .series import write_csv

__all__ = [
    "MonitorReport",
    "ComparatorResult",
    "GronwallWeights",
    "BaroclinicField",
    "TwinRun",
    "IncompatibleRunsError",
    "poincare_check",
    "baroclinic_split",
    "vtilde_l4_norm",
    "problem_scale",
    "slack_factor",
    "forcing_hash",
    "apriori_bound_check",
    "l2_energy_bound_check",
    "dissipation_bound_check",
    "h1_monitor",
    "gronwall_weights",
    "weak_strong_compare",
]


class IncompatibleRunsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# reports


@dataclass
class MonitorReport:
    """Per-sample rows; asserted inequalities carry both sides and a margin.

    ``margin = slack * rhs - lhs`` so a row passes iff its margin is >= 0.
    """

    name: str
    columns: tuple
    rows: list = field(default_factory=list)
    passed: bool = True
    worst_margin: float = math.inf
    slack: float = 1.0
    metadata: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def summary(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed),
                "worst_margin": float(self.worst_margin), "slack": float(self.slack),
                "rows": len(self.rows), "metadata": self.metadata, "notes": list(self.notes)}

    def to_csv(self, path) -> Path:
        return write_csv(path, self.columns, self.rows)

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.summary(), indent=2, default=_jsonable) + "\n")
        return path


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


# ---------------------------------------------------------------------------
# Poincare and the barotropic/baroclinic split


def poincare_check(v: SpectralField, h: float | None = None) -> tuple[float, float, bool]:
    """(||v||, h ||dz v||, ||v|| <= h ||dz v||)."""
    g = v.grid
    h = g.h if h is None else h
    lhs = norm_l2(v)
    rhs = h * math.sqrt(float(np.sum(g.mu**2 * np.abs(v.coef) ** 2)))
    return lhs, rhs, bool(lhs <= rhs)


@functools.lru_cache(maxsize=16)
def _fine_vertical(K: int, h: float, nz: int):
    x, w = np.polynomial.legendre.leggauss(nz)
    z = -0.5 * h * (1.0 - x)
    w = 0.5 * h * w
    mu = (2 * np.arange(K) + 1) * np.pi / (2 * h)
    psi = np.sqrt(2.0 / h) * np.sin(np.outer(z + h, mu))
    cbar = np.sqrt(2.0 / h) * 2.0 / ((2 * np.arange(K) + 1) * np.pi)
    return z, w, psi - cbar  # fluctuation profiles psi_k - cbar_k


def _synth(spec: np.ndarray, g: Grid, PM: int, PN: int) -> np.ndarray:
    """(..., M, N) full spectrum -> real samples on a PM x PN grid."""
    hm, hn = g.M // 2, g.N // 2
    half = np.zeros(spec.shape[:-2] + (PM, PN // 2 + 1), dtype=complex)
    half[..., :hm, :hn] = spec[..., :hm, :hn]
    half[..., PM - hm + 1:, :hn] = spec[..., hm + 1:, :hn]
    return sfft.irfft2(half, s=(PM, PN), norm="forward", workers=fft_workers())


@dataclass(frozen=True, eq=False)
class BaroclinicField:
    """v - vbar sampled on Gauss-Legendre levels x a 2M x 2N horizontal grid.

    The fluctuation leaves the sine span (constants do), so its norms are
    quadratures.  The horizontal grid makes |v|^4 integrals exact in x, y.
    """

    values: np.ndarray  # (2, nz, PM, PN)
    z: np.ndarray
    wz: np.ndarray
    grid: Grid

    def norm_l2(self) -> float:
        dens = np.sum(self.values**2, axis=0).mean(axis=(-2, -1))
        return math.sqrt(float(self.wz @ dens))

    def norm_l4(self) -> float:
        dens = (np.sum(self.values**2, axis=0) ** 2).mean(axis=(-2, -1))
        return float(self.wz @ dens) ** 0.25

    def vertical_mean(self) -> np.ndarray:
        """(1/h) * integral dz, per horizontal point; (2, PM, PN)."""
        return np.tensordot(self.values, self.wz, axes=([1], [0])) / self.grid.h


def baroclinic_split(v: SpectralField, nz: int | None = None) -> tuple[BarotropicField, BaroclinicField]:
    """Return (vbar, vtilde) with vbar the vertical mean and vtilde = v - vbar."""
    g = v.grid
    nz = 4 * g.K + 32 if nz is None else nz
    z, wz, prof = _fine_vertical(g.K, g.h, nz)
    lev = _synth(np.moveaxis(v.coef, -1, -3), g, 2 * g.M, 2 * g.N)  # (2, K, PM, PN)
    sh = lev.shape
    vals = (prof @ lev.reshape(2, g.K, -1)).reshape(2, nz, sh[-2], sh[-1])
    return vertical_average(v), BaroclinicField(vals, z, wz, g)


def vtilde_l4_norm(v: SpectralField) -> float:
    return baroclinic_split(v)[1].norm_l4()


# ---------------------------------------------------------------------------
# forcing integrals and slack


def forcing_hash(fs: ForcingSpec) -> str:
    blob = json.dumps(fs.to_json(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def problem_scale(fs: ForcingSpec | CompiledForcing | None, grid: Grid) -> float:
    """max over forced modes of lambda^2 + omega^2 (lambda_min^2 if unforced).

    For a mode with a non-sine profile the dominant vertical index is used.
    """
    cf = _compiled(fs, grid)
    scale = grid.lam_min() ** 2
    T = cf.spec.T
    for i, j, _, _, col, q, _ in cf.entries:
        k = int(np.argmax(np.abs(col).sum(axis=0)))
        om = 2 * math.pi * q / T if (q and T) else 0.0
        scale = max(scale, float(grid.lam[i, j, k]) ** 2 + om**2)
    return scale


def slack_factor(dt: float, scale: float, c: float = 10.0) -> float:
    return 1.0 + c * dt * dt * scale


def _compiled(fs, grid: Grid) -> CompiledForcing:
    if isinstance(fs, CompiledForcing):
        return fs
    return compile_forcing(fs if fs is not None else ForcingSpec(), grid, warn=False)


_GL_T = np.polynomial.legendre.leggauss(8)


def _forcing_integrals(cf: CompiledForcing, t: np.ndarray, rate: float):
    """Per sample t_i (from t_0): exponentially weighted and squared integrals.

    Returns (I, J) with I_i = int_{t_0}^{t_i} exp(rate (tau - t_i)) ||f|| dtau
    and J_i = int_{t_0}^{t_i} ||f||^2 dtau, by 8-point Gauss-Legendre per interval.
    """
    I = np.zeros(len(t))
    J = np.zeros(len(t))
    if cf.is_zero:
        return I, J
    x, w = _GL_T
    for i in range(1, len(t)):
        a, b = t[i - 1], t[i]
        tau = 0.5 * (a + b) + 0.5 * (b - a) * x
        fn = np.array([cf.norm(s) for s in tau])
        ww = 0.5 * (b - a) * w
        I[i] = math.exp(-rate * (b - a)) * I[i - 1] + float(ww @ (np.exp(rate * (tau - b)) * fn))
        J[i] = J[i - 1] + float(ww @ fn**2)
    return I, J


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros(len(t))
    if len(t) > 1:
        out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def _traj_meta(traj, fs, grid, dt, scale, c) -> dict:
    return {"grid": list(grid.key), "dt": dt, "forcing": fs.name if fs else "",
            "forcing_hash": forcing_hash(fs) if fs is not None else "",
            "slack_c": c, "slack_scale": scale}


def _finish(rep: MonitorReport, margins) -> MonitorReport:
    margins = np.asarray(margins, dtype=float)
    rep.worst_margin = float(margins.min()) if margins.size else math.inf
    rep.passed = bool(np.all(margins >= 0))
    return rep


# ---------------------------------------------------------------------------
# asserted inequalities


def apriori_bound_check(traj, fs: ForcingSpec | None = None, h: float | None = None,
                        c: float = 10.0) -> MonitorReport:
    """Exponential bound and its sup form at every ledger sample.

    ``||v(t)|| <= exp(-2t/h^2) ||v(0)|| + 2 int_0^t exp(2(tau - t)/h^2) ||f|| dtau``
    ``||v(t)|| <= ||v(0)|| + 2 int_0^t exp(2 tau/h^2) ||f|| dtau``
    (times measured from the first sample; the ball radius enters the second
    form through ``||v(0)||``).
    """
    led = traj.ledger
    grid = traj.snapshots[0].grid if traj.snapshots else _ledger_grid(led)
    h = grid.h if h is None else h
    fs = traj.forcing if fs is None else fs
    cf = _compiled(fs, grid)
    t = led.t
    s = t - t[0]
    nv = np.sqrt(np.maximum(led.E, 0.0))
    rate = 2.0 / h**2
    I, _ = _forcing_integrals(cf, t, rate)
    rhs34 = np.exp(-rate * s) * nv[0] + 2.0 * I
    with np.errstate(over="ignore"):
        rhs35 = nv[0] + 2.0 * np.exp(rate * s) * I
    scale = problem_scale(cf, grid)
    sl = slack_factor(traj.dt, scale, c)
    m34 = sl * rhs34 - nv
    m35 = sl * rhs35 - nv
    cols = ("t", "norm_v_L2", "rhs_exponential", "rhs_sup", "margin_exponential", "margin_sup", "pass")
    rows = [(t[i], nv[i], rhs34[i], rhs35[i], m34[i], m35[i], bool(m34[i] >= 0 and m35[i] >= 0))
            for i in range(len(t))]
    rep = MonitorReport("apriori_bound", cols, rows, slack=sl,
                        metadata=_traj_meta(traj, fs, grid, traj.dt, scale, c))
    return _finish(rep, np.minimum(m34, m35))


def l2_energy_bound_check(traj, fs: ForcingSpec | None = None, h: float | None = None,
                          c: float = 10.0) -> MonitorReport:
    """``||u(t)||^2 + int_0^t ||grad u||^2 <= ||u(0)||^2 + h^2 int_0^t ||f||^2``."""
    led = traj.ledger
    grid = traj.snapshots[0].grid if traj.snapshots else _ledger_grid(led)
    h = grid.h if h is None else h
    fs = traj.forcing if fs is None else fs
    cf = _compiled(fs, grid)
    t, E, D = led.t, led.E, led.D
    _, J = _forcing_integrals(cf, t, 0.0)
    lhs = E + _cumtrapz(D, t)
    rhs = E[0] + h**2 * J
    scale = problem_scale(cf, grid)
    sl = slack_factor(traj.dt, scale, c)
    margin = sl * rhs - lhs
    cols = ("t", "norm_v_L2_sq_plus_int_grad_sq", "rhs", "margin", "pass")
    rows = [(t[i], lhs[i], rhs[i], margin[i], bool(margin[i] >= 0)) for i in range(len(t))]
    rep = MonitorReport("l2_energy_bound", cols, rows, slack=sl,
                        metadata=_traj_meta(traj, fs, grid, traj.dt, scale, c))
    return _finish(rep, margin)


def dissipation_bound_check(ledger, fs: ForcingSpec, grid: Grid, dt: float,
                            c: float = 10.0) -> MonitorReport:
    """Dissipation over whole periods of a periodic orbit.

    Reports ``int ||grad v||^2`` against ``h^4 int ||f||^2`` and the sharper
    ``h^2 int ||f||^2`` that follows from the energy identity and Poincare.
    The h^4 form is asserted when h >= 1, where the h^2 form implies it; for
    h < 1 the h^4 form is not implied and the h^2 form is asserted instead.
    Both are reported.
    """
    h = grid.h
    cf = _compiled(fs, grid)
    t, D = ledger.t, ledger.D
    _, J = _forcing_integrals(cf, t, 0.0)
    lhs = float(_cumtrapz(D, t)[-1])
    rhs4 = h**4 * float(J[-1])
    rhs2 = h**2 * float(J[-1])
    scale = problem_scale(cf, grid)
    sl = slack_factor(dt, scale, c)
    asserted = "h4" if h >= 1 else "h2"
    rhs = rhs4 if h >= 1 else rhs2
    margin = sl * rhs - lhs
    cols = ("t_end", "int_grad_v_sq", "rhs_h4", "rhs_h2", "margin_h4", "margin_h2", "pass")
    rows = [(t[-1], lhs, rhs4, rhs2, sl * rhs4 - lhs, sl * rhs2 - lhs, bool(margin >= 0))]
    rep = MonitorReport("dissipation_bound", cols, rows, slack=sl,
                        metadata={"grid": list(grid.key), "dt": dt, "asserted": asserted,
                                  "forcing_hash": forcing_hash(cf.spec), "slack_scale": scale})
    if h < 1:
        rep.notes.append("h < 1: the h^4 form is weaker than the h^2 form; asserting h^2")
    return _finish(rep, [margin])


def _ledger_grid(ledger) -> Grid:
    from .basis import make_grid
    M, N, K, h, Q = ledger.metadata["grid"]
    return make_grid(M, N, K, h, Q)


# ---------------------------------------------------------------------------
# monitors (reported, not asserted)


def _spectral_norms(v: SpectralField) -> dict:
    g = v.grid
    p = np.abs(v.coef) ** 2
    E = float(p.sum())
    D = float(np.sum(g.lam * p))
    mu2 = g.mu**2
    vbar = v.coef @ g.cbar
    pb = np.abs(vbar) ** 2
    gradH_sq = float(np.sum(g.kh2[..., None] * p))
    gradH_vbar_sq = float(np.sum(g.kh2 * pb))
    return {
        "E": E,
        "D": D,
        "lap_sq": float(np.sum(g.lam**2 * p)),
        "dz_sq": float(np.sum(mu2 * p)),
        "grad_dz_sq": float(np.sum(g.lam * mu2 * p)),
        "gradH_sq": gradH_sq,
        "gradH_vbar_sq": gradH_vbar_sq,
        # grad_H commutes with the vertical mean, so the split is orthogonal
        "gradH_vtilde_sq": max(gradH_sq - g.h * gradH_vbar_sq, 0.0),
    }


def _need_snapshots(traj) -> None:
    if not traj.snapshots:
        raise ValueError("this monitor needs trajectory snapshots (integrate(..., snapshots=True))")


H1_COLUMNS = (
    "t",
    "norm_u_H1",
    "int_lap_u_sq",
    "norm_u_H1_sq_plus_int_lap_sq",
    "norm_grad_H_ubar_L2G",
    "norm_dz_u_L2",
    "norm_utilde_L4",
    "int_grad_H_p_sq_L2G",
    "int_grad_dz_u_sq",
    "int_utilde_L4_grad_H_utilde_sq",
)


def h1_monitor(traj) -> MonitorReport:
    """H1 bundle and the barotropic/baroclinic monitors; asserts finiteness only."""
    _need_snapshots(traj)
    t = np.array(traj.times, dtype=float)
    n = len(t)
    H1 = np.zeros(n)
    lap = np.zeros(n)
    gvb = np.zeros(n)
    dz = np.zeros(n)
    l4 = np.zeros(n)
    gp = np.zeros(n)
    gdz = np.zeros(n)
    mix = np.zeros(n)
    pressures = list(traj.pressures) if traj.pressures else [None] * n
    # the first sample has no step behind it; borrow the next half-step pressure
    for i in range(n):
        if pressures[i] is None:
            pressures[i] = next((p for p in pressures[i:] if p is not None), None)
    for i, v in enumerate(traj.snapshots):
        s = _spectral_norms(v)
        H1[i] = math.sqrt(s["E"] + s["D"])
        lap[i] = s["lap_sq"]
        gvb[i] = math.sqrt(s["gradH_vbar_sq"])
        dz[i] = math.sqrt(s["dz_sq"])
        l4[i] = vtilde_l4_norm(v)
        gp[i] = pressures[i].grad_norm_sq() if pressures[i] is not None else 0.0
        gdz[i] = s["grad_dz_sq"]
        mix[i] = l4[i] * s["gradH_vtilde_sq"]
    int_lap = _cumtrapz(lap, t)
    cols = H1_COLUMNS
    data = np.column_stack([t, H1, int_lap, H1**2 + int_lap, gvb, dz, l4,
                            _cumtrapz(gp, t), _cumtrapz(gdz, t), _cumtrapz(mix, t)])
    rep = MonitorReport("h1_monitor", cols, [tuple(r) for r in data],
                        metadata={"grid": list(traj.snapshots[0].grid.key), "dt": traj.dt,
                                  "asserted": "finite"})
    rep.passed = bool(np.all(np.isfinite(data)))
    rep.worst_margin = 0.0 if rep.passed else -math.inf
    rep.notes.append("bounds B, B1 are existence-level; values reported, finiteness asserted")
    return rep


@dataclass
class GronwallWeights:
    """K1, K2 and g per sample (universal constants set to 1) with running integrals."""

    t: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    g: np.ndarray
    int_K1: np.ndarray
    int_K2: np.ndarray
    int_g: np.ndarray
    constants: dict = field(default_factory=lambda: {"C": 1.0})

    def to_report(self) -> MonitorReport:
        cols = ("t", "K1", "K2", "g", "int_K1", "int_K2", "int_g")
        data = np.column_stack([self.t, self.K1, self.K2, self.g,
                                self.int_K1, self.int_K2, self.int_g])
        rep = MonitorReport("gronwall_weights", cols, [tuple(r) for r in data],
                            metadata={"constants": self.constants})
        rep.passed = bool(np.all(np.isfinite(data)))
        rep.worst_margin = 0.0
        return rep


def _gronwall_g(v: SpectralField) -> float:
    s = _spectral_norms(v)
    # ||dz u||_H1^2 = ||dz u||^2 + ||grad dz u||^2
    return s["gradH_sq"] ** 2 + s["dz_sq"] * (s["dz_sq"] + s["grad_dz_sq"])


def gronwall_weights(traj, fs: ForcingSpec | None = None) -> GronwallWeights:
    """K1, K2 of the H1 estimate and the uniqueness weight g along a trajectory."""
    _need_snapshots(traj)
    t = np.array(traj.times, dtype=float)
    grid = traj.snapshots[0].grid
    cf = _compiled(traj.forcing if fs is None else fs, grid)
    K1 = np.zeros(len(t))
    K2 = np.zeros(len(t))
    gw = np.zeros(len(t))
    for i, v in enumerate(traj.snapshots):
        s = _spectral_norms(v)
        u = math.sqrt(s["E"])
        H = math.sqrt(s["E"] + s["D"])
        f = cf.norm(t[i])
        K1[i] = (1 + u + u**2) * (H ** (2 / 3) + H + H**2 + f**2)
        K2[i] = (1 + u**2 + u**4) * H**2 + f + f**2
        gw[i] = _gronwall_g(v)
    return GronwallWeights(t, K1, K2, gw, _cumtrapz(K1, t), _cumtrapz(K2, t), _cumtrapz(gw, t))


# ---------------------------------------------------------------------------
# weak-strong twin runs


@dataclass
class TwinRun:
    """One side of a comparison: resolution, step and shared physical problem."""

    grid: Grid
    dt: float
    t_end: float
    forcing: ForcingSpec
    initial: SpectralField | None = None
    sample_every: int = 1
    t0: float = 0.0


@dataclass
class ComparatorResult:
    t: np.ndarray
    sigma_norms: np.ndarray
    gronwall_weight: np.ndarray
    int_g: np.ndarray
    certificate_ratio: np.ndarray
    sup_sigma: float
    coarse: tuple
    fine: tuple
    metadata: dict = field(default_factory=dict)

    COLUMNS = ("t", "norm_sigma_L2", "g", "int_g", "certificate_ratio")

    def rows(self) -> list:
        return [tuple(r) for r in np.column_stack([self.t, self.sigma_norms, self.gronwall_weight,
                                                   self.int_g, self.certificate_ratio])]

    def summary(self) -> dict:
        fin = self.certificate_ratio[np.isfinite(self.certificate_ratio)]
        return {"sup_sigma": self.sup_sigma, "sigma_final": float(self.sigma_norms[-1]),
                "sigma_initial": float(self.sigma_norms[0]), "int_g": float(self.int_g[-1]),
                "certificate_ratio_max": float(fin.max()) if fin.size else None,
                "coarse": list(self.coarse), "fine": list(self.fine), "metadata": self.metadata}

    def to_csv(self, path) -> Path:
        return write_csv(path, self.COLUMNS, self.rows())

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.summary(), indent=2, default=_jsonable) + "\n")
        return path


def _initial_on(run: TwinRun) -> SpectralField:
    if run.initial is None:
        return SpectralField.zeros(run.grid)
    return project(regrid(run.initial, run.grid))


def weak_strong_compare(run_coarse: TwinRun, run_fine: TwinRun) -> ComparatorResult:
    """Integrate both runs and measure sigma = u_coarse - u_fine on the fine mode set.

    The fine run plays the strong solution; g is evaluated on it.  The
    certificate ratio is log(|sigma(t)|^2 / |sigma(t0)|^2) / int g, the
    empirical Gronwall constant (NaN while sigma(t0) = 0 or int g = 0).
    """
    from .integrator import integrate

    gc, gf = run_coarse.grid, run_fine.grid
    if gc.h != gf.h:
        raise IncompatibleRunsError(f"depth differs: {gc.h} vs {gf.h}")
    if gc.M > gf.M or gc.N > gf.N or gc.K > gf.K:
        raise IncompatibleRunsError(f"fine grid {gf.key} does not contain coarse grid {gc.key}")
    for name in ("dt", "t_end", "t0", "sample_every"):
        if getattr(run_coarse, name) != getattr(run_fine, name):
            raise IncompatibleRunsError(f"runs differ in {name}")
    if run_coarse.forcing != run_fine.forcing:
        raise IncompatibleRunsError("runs use different forcing")
    outs = []
    for run in (run_coarse, run_fine):
        _, _, traj = integrate(_initial_on(run), run.t0, run.t_end, run.dt, run.forcing,
                               sample_every=run.sample_every, snapshots=True)
        outs.append(traj)
    tc, tf = outs
    t = np.array(tf.times)
    sig = np.array([norm_l2(regrid(u, gf) - v) for u, v in zip(tc.snapshots, tf.snapshots)])
    gw = np.array([_gronwall_g(v) for v in tf.snapshots])
    ig = _cumtrapz(gw, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where((ig > 0) & (sig[0] > 0) & (sig > 0),
                         np.log(sig**2 / sig[0] ** 2) / np.where(ig > 0, ig, 1.0), np.nan)
    return ComparatorResult(t, sig, gw, ig, ratio, float(sig.max()), gc.key, gf.key,
                            metadata={"dt": run_fine.dt, "forcing_hash": forcing_hash(run_fine.forcing)})
