"""Slow, independent reference computations used by the tests."""

from __future__ import annotations

import numpy as np


def _synth_direct(a2d: np.ndarray, m: np.ndarray, n: np.ndarray, P: int, R: int) -> np.ndarray:
    """sum_{m,n} a[m, n, ...] exp(2 pi i (m x + n y)) on a P x R grid (direct sums)."""
    x = np.arange(P) / P
    y = np.arange(R) / R
    ex = np.exp(2j * np.pi * np.outer(x, m))  # (P, M)
    ey = np.exp(2j * np.pi * np.outer(y, n))  # (R, N)
    return np.einsum("pm,rn,mn...->pr...", ex, ey, a2d)


def advect_oracle(va: np.ndarray, pa: np.ndarray, grid, over: int = 3, nz: int | None = None):
    """Galerkin coefficients of v . grad_H phi + w(v) d_z phi by brute-force quadrature.

    Horizontal sums on an ``over`` x oversampled grid, Gauss-Legendre in z,
    w from its closed-form column integral.
    """
    g = grid
    nz = nz or 6 * g.K + 40
    xg, wg = np.polynomial.legendre.leggauss(nz)
    z = -0.5 * g.h * (1 - xg)
    wz = 0.5 * g.h * wg
    mu = g.mu
    c = np.sqrt(2 / g.h)
    psi = c * np.sin(np.outer(z + g.h, mu))  # (nz, K)
    dpsi = c * mu * np.cos(np.outer(z + g.h, mu))
    ipsi = c * np.cos(np.outer(z + g.h, mu)) / mu  # int_z^0 psi
    m, n = g.m, g.n
    kx = 2j * np.pi * m[:, None, None]
    ky = 2j * np.pi * n[None, :, None]
    P, R = over * g.M, over * g.N

    def field(coef, prof):  # (M, N, K) -> (P, R, nz)
        return _synth_direct(coef @ prof.T, m, n, P, R).real

    v1, v2 = field(va[0], psi), field(va[1], psi)
    out = []
    div = kx * va[0] + ky * va[1]
    w = field(div, ipsi)
    for comp in (0, 1):
        ph = pa[comp]
        val = v1 * field(kx * ph, psi) + v2 * field(ky * ph, psi) + w * field(ph, dpsi)
        # project: (1/(P R)) sum_xy val e^{-2 pi i (m x + n y)}, then int dz psi_k
        x = np.arange(P) / P
        y = np.arange(R) / R
        ex = np.exp(-2j * np.pi * np.outer(m, x))
        ey = np.exp(-2j * np.pi * np.outer(n, y))
        hat = np.einsum("mp,nr,prz->mnz", ex, ey, val) / (P * R)
        out.append(hat @ (wz[:, None] * psi))
    res = np.stack(out)
    res *= g.active[None, :, :, None]
    return res


def physical_direct(coef: np.ndarray, grid, P: int, R: int, z: np.ndarray, prof: str = "sine"):
    """Field values (2, P, R, len(z)) by direct Fourier and sine sums."""
    c = np.sqrt(2 / grid.h)
    arg = np.outer(z + grid.h, grid.mu)
    tab = {"sine": c * np.sin(arg), "cosine": c * grid.mu * np.cos(arg)}[prof]
    return np.stack([_synth_direct(coef[i] @ tab.T, grid.m, grid.n, P, R).real for i in range(2)])


def gauss_z(grid, nz: int):
    xg, wg = np.polynomial.legendre.leggauss(nz)
    return -0.5 * grid.h * (1 - xg), 0.5 * grid.h * wg


def inner_quadrature(u: np.ndarray, v: np.ndarray, grid, over: int = 3, nz: int = 80) -> float:
    """Integral of u . v over the box by oversampled trapezoid x Gauss-Legendre."""
    z, wz = gauss_z(grid, nz)
    P, R = over * grid.M, over * grid.N
    fu = physical_direct(u, grid, P, R, z)
    fv = physical_direct(v, grid, P, R, z)
    return float(np.einsum("cprz,cprz,z->", fu, fv, wz) / (P * R))


def dense_null_projector(grid) -> np.ndarray:
    """Orthogonal projector onto {a : sum_k cbar_k (k_H . a_k) = 0} per wavevector.

    Built by explicit orthonormalization; returns P of shape (M, N, 2K, 2K)
    acting on the stacked (x-components, y-components) vector.
    """
    K = grid.K
    out = np.zeros((grid.M, grid.N, 2 * K, 2 * K))
    for i in range(grid.M):
        for j in range(grid.N):
            kx, ky = grid.kx[i, 0], grid.ky[0, j]
            row = np.concatenate([kx * grid.cbar, ky * grid.cbar])
            if not np.any(row):
                out[i, j] = np.eye(2 * K)
                continue
            q, _ = np.linalg.qr(row[:, None], mode="complete")
            null = q[:, 1:]
            out[i, j] = null @ null.T
    return out
