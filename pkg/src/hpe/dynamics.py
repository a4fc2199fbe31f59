"""Right-hand side of the reformulated primitive equations.

Diagnostic vertical velocity w(v) = int_z^0 div_H v, the advection term
v . grad_H phi + w(v) d_z phi (pseudospectral, dealiased, exactly projected),
the trilinear-form estimator report, and T-periodic forcing.
"""

from __future__ import annotations

import cmath
import functools
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft

from .basis import (
    Grid,
    SpectralField,
    fft_workers,
    hermitize,
    levels_to_coef,
    inner_l2,
    norm_grad_sq,
    norm_l2,
    vertical_apply,
)

__all__ = [
    "WField",
    "ForcingMode",
    "ForcingSpec",
    "CompiledForcing",
    "ForcingTruncationWarning",
    "compute_w",
    "advect",
    "nonlinear_term",
    "forcing_eval",
    "compile_forcing",
    "trilinear_estimate_report",
    "PRESETS",
    "preset",
]


# ---------------------------------------------------------------------------
# vertical velocity


@dataclass(frozen=True, eq=False)
class WField:
    """w(x, y, z) = sum wc[m, n, k] exp(2 pi i (m x + n y)) cos(mu_k (z + h))."""

    wc: np.ndarray  # (M, N, K)
    grid: Grid

    def column(self, z) -> np.ndarray:
        """Fourier coefficients of w at height(s) ``z``: shape (M, N) or (M, N, len(z))."""
        g = self.grid
        prof = np.cos(np.multiply.outer(np.asarray(z, dtype=float) + g.h, g.mu))
        return self.wc @ prof.T


def _div_coef(a: np.ndarray, g: Grid) -> np.ndarray:
    return 1j * (g.kx[..., None] * a[0] + g.ky[..., None] * a[1])


def compute_w(v: SpectralField) -> WField:
    """Vertical velocity from the horizontal divergence (w = 0 at z = 0)."""
    g = v.grid
    scale = np.sqrt(2.0 / g.h) / g.mu
    return WField(_div_coef(v.coef, g) * scale, g)


# ---------------------------------------------------------------------------
# advection


@functools.lru_cache(maxsize=32)
def _pad_layout(key: tuple):
    """Row map and derivative symbols on the padded half spectrum."""
    M, N = key[0], key[1]
    padM, padN = (3 * M) // 2, (3 * N) // 2
    hm, hn = M // 2, N // 2
    src = np.r_[0:hm, hm + 1:M]
    dst = np.r_[0:hm, padM - hm + 1:padM]
    m = np.zeros(padM)
    m[dst] = np.fft.fftfreq(M, 1.0 / M)[src]
    ikx = (2j * np.pi * m)[:, None]
    iky = (2j * np.pi * np.arange(hn))[None, :]
    return src, dst, ikx, iky, padN // 2 + 1


def advect_coef(va: np.ndarray, pa: np.ndarray, g: Grid,
                horizontal: bool = True, vertical: bool = True) -> np.ndarray:
    """Galerkin coefficients of v . grad_H phi + w(v) d_z phi (raw arrays).

    Arrays are ``(..., 2, M, N, K)``; leading axes are a batch.  Horizontal
    transforms act on the K mode levels of a padded half spectrum; vertical
    synthesis and the exact product projection are real matrix products in
    physical space.  Passing the same array twice skips the duplicate
    transforms of phi.
    """
    src, dst, ikx, iky, ncol = _pad_layout(g.key)
    hn = g.N // 2
    batch = va.shape[:-4]
    same = pa is va
    # slots: v (2) | grad phi (4) | phi (2, only if phi is not v) | div v (1)
    d = 2
    p = 2 + 4 * horizontal
    nf = p + 2 * (not same)
    q = nf
    nf += vertical
    buf = np.zeros(batch + (nf, g.K, g.padM, ncol), dtype=complex)
    buf[..., 0:2, :, dst, :hn] = np.moveaxis(va[..., :, src, :hn, :], -1, -3)
    if same:
        p = 0
    else:
        buf[..., p:p + 2, :, dst, :hn] = np.moveaxis(pa[..., :, src, :hn, :], -1, -3)
    ph = buf[..., p:p + 2, :, :, :hn]
    if horizontal:
        buf[..., d:d + 2, :, :, :hn] = ikx * ph
        buf[..., d + 2:d + 4, :, :, :hn] = iky * ph
    if vertical:
        buf[..., q, :, :, :hn] = ikx * buf[..., 0, :, :, :hn] + iky * buf[..., 1, :, :, :hn]
    lev = sfft.irfft2(buf, s=(g.padM, g.padN), norm="forward", workers=fft_workers(),
                      overwrite_x=True)  # (..., F, K, padM, padN)
    out = np.zeros(batch + (2, g.Q, g.padM, g.padN))
    if horizontal:
        sine = vertical_apply(g.S, lev[..., 0:6, :, :, :])
        u1, u2 = sine[..., 0:1, :, :, :], sine[..., 1:2, :, :, :]
        out += u1 * sine[..., 2:4, :, :, :]
        out += u2 * sine[..., 4:6, :, :, :]
    if vertical:
        dz = vertical_apply(g.Sd, lev[..., p:p + 2, :, :, :])
        w = vertical_apply(g.Sw, lev[..., q:q + 1, :, :, :])
        out += w * dz
    prod = vertical_apply(g.proj["product"], out)
    return levels_to_coef(prod, g)


def advect(v: SpectralField, phi: SpectralField, horizontal: bool = True,
           vertical: bool = True) -> SpectralField:
    """Projection of v . grad_H phi + w(v) d_z phi onto the basis."""
    v.grid.check(phi.grid)
    return SpectralField(advect_coef(v.coef, phi.coef, v.grid, horizontal, vertical), v.grid)


def nonlinear_term(v: SpectralField) -> SpectralField:
    """N(v) = v . grad_H v + w(v) d_z v, Galerkin-projected."""
    return advect(v, v)


# ---------------------------------------------------------------------------
# forcing


class ForcingTruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ForcingMode:
    """One term amp * exp(i(phase + 2 pi q t / T)) * profile(z) * exp(2 pi i (m x + n y)) + c.c.

    ``profile`` is ``"sine"`` (basis mode ``k``), ``"constant"`` or
    ``"monomial"`` (z**degree).  ``amplitude`` holds the (x, y) components.
    """

    m: int
    n: int
    amplitude: tuple[complex, complex]
    profile: str = "sine"
    k: int = 0
    degree: int = 0
    q: int = 0
    phase: float = 0.0

    def __post_init__(self):
        if self.profile not in ("sine", "constant", "monomial"):
            raise ValueError(f"unknown forcing profile {self.profile!r}")
        if self.profile == "sine" and self.k < 0:
            raise ValueError("sine profile index must be >= 0")
        if self.profile == "monomial" and self.degree < 0:
            raise ValueError("monomial degree must be >= 0")
        if len(self.amplitude) != 2:
            raise ValueError("amplitude needs two components")


@dataclass(frozen=True)
class ForcingSpec:
    """Finite mode sum; ``T is None`` means steady."""

    modes: tuple[ForcingMode, ...] = ()
    T: float | None = None
    name: str = ""

    def __post_init__(self):
        if self.T is not None and not self.T > 0:
            raise ValueError(f"forcing period must be positive, got {self.T}")
        if self.T is None and any(md.q for md in self.modes):
            raise ValueError("steady forcing cannot carry temporal harmonics")

    @property
    def steady(self) -> bool:
        return self.T is None or all(md.q == 0 for md in self.modes)

    def scaled(self, s: float) -> "ForcingSpec":
        modes = tuple(replace(md, amplitude=(md.amplitude[0] * s, md.amplitude[1] * s))
                      for md in self.modes)
        return replace(self, modes=modes)

    def max_wavenumbers(self) -> tuple[int, int, int]:
        """Largest |m|, |n| and sine index referenced (0 if none)."""
        if not self.modes:
            return (0, 0, 0)
        return (max(abs(md.m) for md in self.modes), max(abs(md.n) for md in self.modes),
                max(md.k if md.profile == "sine" else 0 for md in self.modes))

    def to_json(self) -> dict:
        def cplx(z):
            z = complex(z)
            return [z.real, z.imag]
        modes = []
        for md in self.modes:
            d = {"m": md.m, "n": md.n, "amplitude": [cplx(md.amplitude[0]), cplx(md.amplitude[1])],
                 "q": md.q, "phase": md.phase}
            if md.profile == "sine":
                d["zprofile"] = {"sine": md.k}
            elif md.profile == "constant":
                d["zprofile"] = "constant"
            else:
                d["zprofile"] = {"monomial": md.degree}
            modes.append(d)
        return {"T": self.T, "name": self.name, "modes": modes}

    @classmethod
    def from_json(cls, d: dict) -> "ForcingSpec":
        allowed = {"T", "name", "modes", "steady"}
        bad = set(d) - allowed
        if bad:
            raise ValueError(f"unknown forcing keys: {sorted(bad)}")
        T = d.get("T")
        if d.get("steady"):
            T = None
        modes = []
        for i, md in enumerate(d.get("modes", [])):
            bad = set(md) - {"m", "n", "amplitude", "zprofile", "q", "phase"}
            if bad:
                raise ValueError(f"forcing.modes[{i}]: unknown keys {sorted(bad)}")
            prof = md.get("zprofile", {"sine": 0})
            kw = {}
            if prof == "constant":
                kw["profile"] = "constant"
            elif isinstance(prof, dict) and set(prof) == {"sine"}:
                kw.update(profile="sine", k=int(prof["sine"]))
            elif isinstance(prof, dict) and set(prof) == {"monomial"}:
                kw.update(profile="monomial", degree=int(prof["monomial"]))
            else:
                raise ValueError(f"forcing.modes[{i}].zprofile: cannot parse {prof!r}")
            amp = tuple(complex(*a) if isinstance(a, (list, tuple)) else complex(a)
                        for a in md["amplitude"])
            modes.append(ForcingMode(m=int(md["m"]), n=int(md["n"]), amplitude=amp,
                                     q=int(md.get("q", 0)), phase=float(md.get("phase", 0.0)),
                                     **kw))
        return cls(modes=tuple(modes), T=T, name=d.get("name", ""))


def _profile_coefficients(md: ForcingMode, g: Grid) -> np.ndarray:
    """Exact projections of the z-profile onto psi_k, k < K."""
    if md.profile == "sine":
        out = np.zeros(g.K)
        if md.k < g.K:
            out[md.k] = 1.0
        return out
    if md.profile == "constant":
        return g.h * g.cbar
    # polynomial times sine: Gauss-Legendre at a degree that is exact to round-off
    nq = max(64, 4 * g.K + md.degree + 32)
    x, w = np.polynomial.legendre.leggauss(nq)
    z = -0.5 * g.h * (1.0 - x)
    w = 0.5 * g.h * w
    psi = np.sqrt(2.0 / g.h) * np.sin(np.outer(z + g.h, g.mu))
    return (w * z**md.degree) @ psi


@dataclass(eq=False)
class CompiledForcing:
    """Forcing specialised to a grid: sparse per-mode coefficient columns."""

    spec: ForcingSpec
    grid: Grid
    entries: list = field(default_factory=list)  # (i, j, ineg, jneg, col(2,K), omega, phase)
    truncated: list = field(default_factory=list)

    def coef(self, t: float) -> np.ndarray:
        g = self.grid
        a = np.zeros(g.shape, dtype=complex)
        T = self.spec.T
        frac = math.fmod(t, T) / T if T else 0.0
        for i, j, ineg, jneg, col, q, phase in self.entries:
            c = col * cmath.exp(1j * (phase + 2.0 * math.pi * q * frac)) if (q or phase) else col
            a[:, i, j, :] += c
            a[:, ineg, jneg, :] += np.conj(c)
        return hermitize(a, g) if len(self.entries) > 1 else a

    def norm(self, t: float) -> float:
        """||P f(t)||_2 without building the full coefficient array."""
        T = self.spec.T
        frac = math.fmod(t, T) / T if T else 0.0
        acc: dict = {}
        for i, j, ineg, jneg, col, q, phase in self.entries:
            c = col * cmath.exp(1j * (phase + 2.0 * math.pi * q * frac)) if (q or phase) else col
            acc[i, j] = acc.get((i, j), 0) + c
            acc[ineg, jneg] = acc.get((ineg, jneg), 0) + np.conj(c)
        return math.sqrt(sum(float(np.sum(np.abs(c) ** 2)) for c in acc.values()))

    def __call__(self, t: float) -> SpectralField:
        return SpectralField(self.coef(t), self.grid)

    @property
    def is_zero(self) -> bool:
        return not self.entries


def compile_forcing(fs: ForcingSpec, g: Grid, warn: bool = True) -> CompiledForcing:
    cf = CompiledForcing(fs, g)
    for md in fs.modes:
        if (abs(md.m) >= g.M // 2 or abs(md.n) >= g.N // 2
                or (md.profile == "sine" and md.k >= g.K)):
            cf.truncated.append((md.m, md.n, md.k if md.profile == "sine" else None))
            continue
        i, j = md.m % g.M, md.n % g.N
        prof = _profile_coefficients(md, g)
        col = np.array(md.amplitude, dtype=complex)[:, None] * prof
        cf.entries.append((i, j, g.neg_m[i], g.neg_n[j], col, md.q, md.phase))
    if cf.truncated and warn:
        warnings.warn(f"forcing modes outside the grid were dropped: {cf.truncated}",
                      ForcingTruncationWarning, stacklevel=2)
    return cf


def forcing_eval(fs: ForcingSpec, t: float, grid: Grid) -> SpectralField:
    """Basis projection of f(t)."""
    return compile_forcing(fs, grid)(t)


# ---------------------------------------------------------------------------
# presets

def _harmonic_modes(q: int):
    return (
        ForcingMode(1, 0, (0.0, 1.0), "sine", k=0, q=q),
        ForcingMode(0, 1, (1.0, 0.0), "sine", k=1, q=q, phase=math.pi / 3),
        ForcingMode(1, 1, (0.5, 0.0), "sine", k=0, q=q, phase=math.pi / 2),
    )


PRESETS: dict[str, ForcingSpec] = {
    "zero": ForcingSpec((), T=1.0, name="zero"),
    # low-mode single-harmonic forcing; the (1,1) term has a parallel part
    "channel_harmonic": ForcingSpec(_harmonic_modes(1), T=1.0, name="channel_harmonic"),
    "channel_steady": ForcingSpec(_harmonic_modes(0), T=None, name="channel_steady"),
    # two interacting shear waves, both perpendicular to their wavevector
    "shear_pair": ForcingSpec(
        (ForcingMode(1, 0, (0.0, 1.0), "sine", k=0, q=1),
         ForcingMode(0, 1, (1.0, 0.0), "sine", k=1, q=1)),
        T=1.0, name="shear_pair"),
    "constant_column": ForcingSpec(
        (ForcingMode(1, 0, (0.0, 1.0), "constant"),), T=None, name="constant_column"),
}


def preset(name: str, scale: float = 1.0) -> ForcingSpec:
    try:
        fs = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown forcing preset {name!r}; known: {sorted(PRESETS)}") from None
    return fs.scaled(scale) if scale != 1.0 else fs


# ---------------------------------------------------------------------------
# trilinear estimators


def _h1_sq(v: SpectralField) -> float:
    return norm_l2(v) ** 2 + norm_grad_sq(v)


def trilinear_estimate_report(v1: SpectralField, v2: SpectralField, v3: SpectralField) -> dict:
    """Both trilinear terms and the norm products bounding them (constants omitted).

    horizontal: |(v1 . grad_H v3, v2)|  vs  |v1|^1/2 |v1|_H1^1/2 |v2|_H1 |grad_H v3|
    vertical:   |(w(v1) d_z v3, v2)|    vs  |grad_H v1| |v2|^1/2 |v2|_H1^1/2 |d_z v3|^1/2 |d_z v3|_H1^1/2
    """
    g = v1.grid
    g.check(v2.grid)
    g.check(v3.grid)
    lhs_h = abs(inner_l2(advect(v1, v3, vertical=False), v2))
    lhs_v = abs(inner_l2(advect(v1, v3, horizontal=False), v2))
    lhs_sum = abs(inner_l2(advect(v1, v3), v2))
    a1, a2, a3 = (np.abs(x.coef) ** 2 for x in (v1, v2, v3))
    gradH1 = math.sqrt(np.sum(g.kh2[..., None] * a1))
    gradH3 = math.sqrt(np.sum(g.kh2[..., None] * a3))
    dz3 = math.sqrt(np.sum(g.mu**2 * a3))
    # ||d_z v3||_H1^2 = ||d_z v3||^2 + ||grad d_z v3||^2 = sum (1 + lam) mu^2 |a|^2
    dz3_h1 = math.sqrt(np.sum((1.0 + g.lam) * g.mu**2 * a3))
    n1, n2 = norm_l2(v1), norm_l2(v2)
    h1_1, h1_2 = math.sqrt(_h1_sq(v1)), math.sqrt(_h1_sq(v2))
    rhs_h = math.sqrt(n1 * h1_1) * h1_2 * gradH3
    rhs_v = gradH1 * math.sqrt(n2 * h1_2) * math.sqrt(dz3 * dz3_h1)
    return {
        "lhs_horizontal": lhs_h,
        "rhs_horizontal": rhs_h,
        "ratio_horizontal": lhs_h / rhs_h if rhs_h > 0 else 0.0,
        "lhs_vertical": lhs_v,
        "rhs_vertical": rhs_v,
        "ratio_vertical": lhs_v / rhs_v if rhs_v > 0 else 0.0,
        "lhs_sum": lhs_sum,
    }
