"""The hydrostatic constraint div_H vbar = 0 and its pressure multiplier.

Per horizontal wavevector k_H != 0 the constraint is one linear functional,
sum_k cbar[k] * (e . a[:, k]) = 0 with e = k_H / |k_H|, so it only touches the
component of the coefficients parallel to k_H.  Orthogonal projection and the
implicit (diagonal + constraint) solves are therefore rank-one updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import Grid, SpectralField, vertical_average

__all__ = [
    "PressureField",
    "ConstraintData",
    "DegenerateConstraintError",
    "constraint_data",
    "project",
    "constraint_residual",
    "solve_bordered",
    "bordered_solve_field",
    "pressure_from_multiplier",
    "pressure_gradient_coef",
]


class DegenerateConstraintError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class PressureField:
    """Fourier coefficients ``pi[m, n]`` of the z-independent pressure (zero mean)."""

    pi: np.ndarray
    grid: Grid

    @classmethod
    def zeros(cls, grid: Grid) -> "PressureField":
        return cls(np.zeros((grid.M, grid.N), dtype=complex), grid)

    def grad_norm_sq(self) -> float:
        """||grad_H pi||^2 over G."""
        return float(np.sum(self.grid.kh2 * np.abs(self.pi) ** 2))


@dataclass(frozen=True, eq=False)
class ConstraintData:
    cbar: np.ndarray  # (K,)
    ehat: np.ndarray  # (2, M, N), zero at k_H = 0 and on Nyquist lines
    khnorm: np.ndarray  # (M, N) |k_H|


_CACHE: dict = {}


def constraint_data(grid: Grid) -> ConstraintData:
    cd = _CACHE.get(grid.key)
    if cd is None:
        kn = np.sqrt(grid.kh2)
        safe = np.where(kn > 0, kn, 1.0)
        ehat = np.stack([np.broadcast_to(grid.kx, kn.shape) / safe,
                         np.broadcast_to(grid.ky, kn.shape) / safe])
        ehat = ehat * ((kn > 0) & grid.active)
        cd = ConstraintData(grid.cbar.copy(), ehat, kn)
        _CACHE[grid.key] = cd
    return cd


def _parallel(a: np.ndarray, ehat: np.ndarray) -> np.ndarray:
    return ehat[0][..., None] * a[0] + ehat[1][..., None] * a[1]


def project_coef(a: np.ndarray, grid: Grid) -> np.ndarray:
    cd = constraint_data(grid)
    cb = cd.cbar
    s = (_parallel(a, cd.ehat) @ cb) / (cb @ cb)  # (M, N)
    return a - s[None, :, :, None] * cb * cd.ehat[..., None]


def project(v: SpectralField) -> SpectralField:
    """L2-orthogonal projection onto fields with div_H vbar = 0.

    Within each wavevector only the parallel part is changed, and only along
    the profile cbar, so the result stays in the basis span.
    """
    return SpectralField(project_coef(v.coef, v.grid), v.grid)


def constraint_residual(v: SpectralField) -> float:
    """max over wavevectors of |k_H . vbar_hat|."""
    div = vertical_average(v).divergence()
    return float(np.max(np.abs(div))) if div.size else 0.0


def solve_bordered(d: np.ndarray, b: np.ndarray, cbar: np.ndarray):
    """Solve d[k] a[k] + gamma cbar[k] = b[k] subject to sum_k cbar[k] a[k] = 0.

    ``d`` and ``b`` may carry leading batch axes; the vertical index is last.
    Returns ``(a, gamma)`` with gamma shaped like the batch.
    """
    d = np.asarray(d)
    if np.any(d <= 0):
        raise ValueError("bordered solve needs a positive diagonal")
    den = (cbar * cbar / d).sum(axis=-1)
    if np.any(den <= np.finfo(float).tiny):
        raise DegenerateConstraintError("constraint row has vanished (sum cbar^2/d underflow)")
    gamma = (b * (cbar / d)).sum(axis=-1) / den
    a = (b - gamma[..., None] * cbar) / d
    return a, gamma


def bordered_solve_field(d: np.ndarray, rhs: np.ndarray, grid: Grid):
    """Apply :func:`solve_bordered` to every wavevector of a coefficient array.

    ``d`` has shape (M, N, K).  The perpendicular part and the k_H = 0 column
    are plain diagonal solves.  Returns ``(a, gamma[M, N])``.
    """
    cd = constraint_data(grid)
    cb = cd.cbar
    w = cb / d  # (M, N, K)
    den = (cb * w).sum(axis=-1)
    gamma = (_parallel(rhs, cd.ehat) * w).sum(axis=-1) / den
    a = (rhs - gamma[None, :, :, None] * cb * cd.ehat[..., None]) / d
    return a, gamma


def pressure_from_multiplier(gamma: complex, m: int, n: int, grid: Grid) -> complex:
    """Pressure coefficient whose projected gradient equals the multiplier term.

    The Galerkin projection of grad_H pi onto mode (m, n, k) along e is
    i |k_H| h cbar[k] pi_hat, hence pi_hat = gamma / (i |k_H| h).
    """
    if m == 0 and n == 0:
        raise ValueError("pressure multiplier undefined at zero wavevector")
    kn = 2 * np.pi * np.hypot(m, n)
    return gamma / (1j * kn * grid.h)


def pressure_field(gamma: np.ndarray, grid: Grid) -> PressureField:
    """Vectorized :func:`pressure_from_multiplier` over all wavevectors."""
    cd = constraint_data(grid)
    kn = cd.khnorm
    pi = np.where(kn > 0, gamma / (1j * np.where(kn > 0, kn, 1.0) * grid.h), 0.0)
    return PressureField(pi * grid.active, grid)


def pressure_gradient_coef(p: PressureField) -> np.ndarray:
    """Galerkin coefficients of grad_H pi: i k_H pi_hat h cbar[k]."""
    g = p.grid
    gx = 1j * g.kx * p.pi
    gy = 1j * g.ky * p.pi
    return np.stack([gx, gy])[..., None] * (g.h * g.cbar)
