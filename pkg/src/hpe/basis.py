"""Fourier x vertical-sine Galerkin basis on the periodic channel G x (-h, 0).

Horizontal velocity is expanded as

    v(x, y, z) = sum_{m,n,k} a[c, m, n, k] exp(2 pi i (m x + n y)) psi_k(z),
    psi_k(z)   = sqrt(2/h) sin(mu_k (z + h)),   mu_k = (2k + 1) pi / (2h),

so every represented field vanishes at the bottom and has zero vertical
derivative at the top. Coefficients are stored as a full complex array of
shape ``(2, M, N, K)`` in FFT index order; the Nyquist rows/columns are kept
at zero so Hermitian symmetry (real fields) is exact.

Physical samples live on a 3/2-padded horizontal grid and on the vertical
midpoint nodes ``zq[j] = -h + h (2j + 1) / (2Q)``.  In the stretched variable
``theta = pi (z + h) / (2h)`` those nodes are the DCT/DST-II/IV nodes, so each
of the three vertical function classes met in practice has an exact
interpolating transform on them:

``"sine"``     odd quarter-wave sines (the basis span; v itself),
``"cosine"``   odd quarter-wave cosines (dz v, w(v)),
``"product"``  even half-wave cosines (products of two fields of equal class).

``to_spectral`` projects each class with its exact rule, which is what makes
the Galerkin triple products exact and the advection term skew-symmetric to
round-off.
"""

from __future__ import annotations

import functools
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Grid",
    "SpectralField",
    "PhysicalField",
    "BarotropicField",
    "GridMismatchError",
    "make_grid",
    "to_physical",
    "to_spectral",
    "inner_l2",
    "norm_l2",
    "norm_grad_sq",
    "vertical_average",
    "random_field",
    "regrid",
    "fft_workers",
]

VERTICAL_CLASSES = ("sine", "cosine", "product")


class GridMismatchError(ValueError):
    pass


@functools.lru_cache(maxsize=None)
def _workers(env: str) -> int:
    n = int(env or 0)
    return n if n > 0 else (os.cpu_count() or 1)


def fft_workers() -> int:
    """Worker count for scipy.fft, from ``HPE_THREADS`` (0 or unset = auto)."""
    return _workers(os.environ.get("HPE_THREADS", "0"))


def _sin_integral(c):
    """Integral of sin(c theta) over theta in (0, pi/2), elementwise."""
    c = np.asarray(c, dtype=float)
    out = np.zeros_like(c)
    nz = c != 0
    out[nz] = (1.0 - np.cos(0.5 * np.pi * c[nz])) / c[nz]
    return out


def _class_projectors(K: int, Q: int, h: float) -> dict[str, np.ndarray]:
    """Exact K x Q projection matrices onto psi_k for each vertical class.

    For a class with node basis phi_r(theta_j) (orthogonal on the midpoint
    nodes), samples are interpolated in that basis and the interpolant is
    integrated against psi_k in closed form.
    """
    j = np.arange(Q)
    theta = (2 * j + 1) * np.pi / (4 * Q)
    k = np.arange(K)[:, None]
    r = np.arange(Q)[None, :]
    s = 2 * k + 1
    norm = np.sqrt(2.0 / h) * h / np.pi  # sqrt(2/h) * dz/dtheta / 2

    # even cosines cos(2 r theta): DCT-II, T^T T = diag(Q, Q/2, ...)
    T = np.cos(2 * theta[:, None] * np.arange(Q)[None, :])
    scale = np.full(Q, 2.0 / Q)
    scale[0] = 1.0 / Q
    Tinv = scale[:, None] * T.T
    I_prod = norm * (_sin_integral(s + 2 * r) + _sin_integral(s - 2 * r))
    P_prod = I_prod @ Tinv

    # odd cosines cos((2r+1) theta): DCT-IV, T^T T = (Q/2) I
    T = np.cos(theta[:, None] * (2 * np.arange(Q) + 1)[None, :])
    Tinv = (2.0 / Q) * T.T
    I_cos = norm * (_sin_integral(s + 2 * r + 1) + _sin_integral(s - 2 * r - 1))
    P_cos = I_cos @ Tinv

    # odd sines: DST-IV, which reduces to the equal-weight midpoint rule
    zq = -h + h * (2 * j + 1) / (2 * Q)
    mu = (2 * np.arange(K) + 1) * np.pi / (2 * h)
    S = np.sqrt(2.0 / h) * np.sin(np.outer(zq + h, mu))
    P_sine = (h / Q) * S.T
    return {"sine": P_sine, "cosine": P_cos, "product": P_prod}


@dataclass(frozen=True, eq=False)
class Grid:
    """Resolution, wavenumbers, vertical frequencies and quadrature.

    Build with :func:`make_grid`; the array attributes are derived data.
    """

    M: int
    N: int
    K: int
    h: float
    Q: int
    padM: int
    padN: int
    mu: np.ndarray = field(repr=False)
    zq: np.ndarray = field(repr=False)
    wq: np.ndarray = field(repr=False)
    m: np.ndarray = field(repr=False)  # signed integer wavenumbers, FFT order
    n: np.ndarray = field(repr=False)
    active: np.ndarray = field(repr=False)  # (M, N) non-Nyquist mask
    kx: np.ndarray = field(repr=False)  # (M, 1) = 2 pi m
    ky: np.ndarray = field(repr=False)  # (1, N) = 2 pi n
    kh2: np.ndarray = field(repr=False)  # (M, N) |k_H|^2
    lam: np.ndarray = field(repr=False)  # (M, N, K) eigenvalues of -Laplacian
    cbar: np.ndarray = field(repr=False)  # (K,) (1/h) * integral of psi_k
    neg_m: np.ndarray = field(repr=False)
    neg_n: np.ndarray = field(repr=False)
    S: np.ndarray = field(repr=False)  # (Q, K) psi_k(zq)
    Sd: np.ndarray = field(repr=False)  # (Q, K) d/dz psi_k(zq)
    Sw: np.ndarray = field(repr=False)  # (Q, K) integral_z^0 psi_k
    proj: dict = field(repr=False)

    @property
    def key(self) -> tuple:
        return (self.M, self.N, self.K, float(self.h), self.Q)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (2, self.M, self.N, self.K)

    def same_as(self, other: "Grid") -> bool:
        return self is other or self.key == other.key

    def check(self, other: "Grid") -> None:
        if not self.same_as(other):
            raise GridMismatchError(f"grid mismatch: {self.key} vs {other.key}")

    def index(self, m: int, n: int) -> tuple[int, int]:
        """Array indices of the signed wavevector (m, n)."""
        if abs(m) >= self.M // 2 or abs(n) >= self.N // 2:
            raise IndexError(f"mode ({m}, {n}) not resolved on {self.M}x{self.N} grid")
        return m % self.M, n % self.N

    def lam_min(self) -> float:
        return float(self.mu[0] ** 2)

    def lam_max(self) -> float:
        return float(self.lam[self.active].max())


def make_grid(M: int, N: int, K: int, h: float = 1.0, Q: int | None = None) -> Grid:
    """Construct a :class:`Grid`.

    ``Q`` defaults to ``2K``, the smallest node count for which products of
    two resolved fields are projected exactly.
    """
    for name, val in (("M", M), ("N", N)):
        if int(val) != val or val < 2 or val % 2:
            raise ValueError(f"{name} must be an even integer >= 2, got {val!r}")
    if int(K) != K or K < 1:
        raise ValueError(f"K must be a positive integer, got {K!r}")
    if not h > 0:
        raise ValueError(f"h must be positive, got {h!r}")
    M, N, K, h = int(M), int(N), int(K), float(h)
    Q = 2 * K if Q is None else int(Q)
    if Q < 2 * K:
        raise ValueError(f"Q must be >= 2K = {2 * K}, got {Q}")
    padM, padN = (3 * M) // 2, (3 * N) // 2

    mu = (2 * np.arange(K) + 1) * np.pi / (2 * h)
    zq = -h + h * (2 * np.arange(Q) + 1) / (2 * Q)
    wq = np.full(Q, h / Q)
    m = np.fft.fftfreq(M, 1.0 / M).astype(int)
    n = np.fft.fftfreq(N, 1.0 / N).astype(int)
    active = (np.abs(m)[:, None] != M // 2) & (np.abs(n)[None, :] != N // 2)
    kx = 2 * np.pi * m[:, None].astype(float)
    ky = 2 * np.pi * n[None, :].astype(float)
    kh2 = kx**2 + ky**2
    lam = kh2[:, :, None] + mu**2
    cbar = np.sqrt(2.0 / h) * 2.0 / ((2 * np.arange(K) + 1) * np.pi)
    arg = np.outer(zq + h, mu)
    S = np.sqrt(2.0 / h) * np.sin(arg)
    Sd = np.sqrt(2.0 / h) * mu * np.cos(arg)
    Sw = np.sqrt(2.0 / h) * np.cos(arg) / mu
    for arr in (mu, zq, wq, m, n, active, kx, ky, kh2, lam, cbar, S, Sd, Sw):
        arr.setflags(write=False)
    return Grid(
        M=M, N=N, K=K, h=h, Q=Q, padM=padM, padN=padN,
        mu=mu, zq=zq, wq=wq, m=m, n=n, active=active,
        kx=kx, ky=ky, kh2=kh2, lam=lam, cbar=cbar,
        neg_m=(-np.arange(M)) % M, neg_n=(-np.arange(N)) % N,
        S=S, Sd=Sd, Sw=Sw, proj=_class_projectors(K, Q, h),
    )


# ---------------------------------------------------------------------------
# coefficient-array helpers (hot path works on raw arrays)


def conj_partner(a: np.ndarray, grid: Grid) -> np.ndarray:
    """conj(a[..., -m, -n, :]) for arrays with (M, N) at axes -3, -2."""
    return np.conj(a[..., grid.neg_m, :, :][..., grid.neg_n, :])


def hermitize(a: np.ndarray, grid: Grid) -> np.ndarray:
    """Exactly Hermitian-symmetric copy of ``a`` with Nyquist modes zeroed."""
    out = 0.5 * (a + conj_partner(a, grid))
    out *= grid.active[:, :, None]
    return out


def _pad_half(s: np.ndarray, grid: Grid) -> np.ndarray:
    """(..., M, N) full spectrum -> (..., padM, padN//2 + 1) half spectrum."""
    M, N = grid.M, grid.N
    out = np.zeros(s.shape[:-2] + (grid.padM, grid.padN // 2 + 1), dtype=complex)
    hm, hn = M // 2, N // 2
    out[..., :hm, :hn] = s[..., :hm, :hn]
    out[..., grid.padM - hm + 1:, :hn] = s[..., hm + 1:, :hn]
    return out


def _truncate_full(sp: np.ndarray, grid: Grid) -> np.ndarray:
    """(..., padM, padN//2 + 1) half spectrum -> exact-Hermitian (..., M, N)."""
    M, N = grid.M, grid.N
    hm, hn = M // 2, N // 2
    full = np.zeros(sp.shape[:-2] + (M, N), dtype=complex)
    full[..., :hm, :hn] = sp[..., :hm, :hn]
    full[..., hm + 1:, :hn] = sp[..., grid.padM - hm + 1:, :hn]
    col0 = full[..., :, 0]
    full[..., :, 0] = 0.5 * (col0 + np.conj(col0[..., grid.neg_m]))
    # n < 0 columns from n > 0 by conjugation
    full[..., :, N - hn + 1:] = np.conj(full[..., grid.neg_m, hn - 1:0:-1])
    return full


def synthesize(spec: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectra (..., L, M, N) -> real samples (..., L, padM, padN), levelwise."""
    half = _pad_half(spec, grid)
    return sfft.irfft2(half, s=(grid.padM, grid.padN), norm="forward",
                       workers=fft_workers())


def analyze(phys: np.ndarray, grid: Grid) -> np.ndarray:
    """Real samples (..., L, padM, padN) -> truncated spectra (..., L, M, N)."""
    sp = sfft.rfft2(phys, norm="forward", workers=fft_workers())
    return _truncate_full(sp, grid)


def vertical_apply(mat: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Contract ``mat`` (A, B) with axis -3 of ``x`` (..., B, P, R)."""
    sh = x.shape
    y = mat @ x.reshape(sh[:-3] + (sh[-3], sh[-2] * sh[-1]))
    return y.reshape(sh[:-3] + (mat.shape[0],) + sh[-2:])


def coef_to_levels(a: np.ndarray, grid: Grid) -> np.ndarray:
    """Coefficients (..., M, N, K) -> real mode-level fields (..., K, padM, padN)."""
    return synthesize(np.moveaxis(a, -1, -3), grid)


def levels_to_coef(levels: np.ndarray, grid: Grid) -> np.ndarray:
    """Real mode-level fields (..., K, padM, padN) -> coefficients (..., M, N, K)."""
    return np.moveaxis(analyze(levels, grid), -3, -1)


# ---------------------------------------------------------------------------
# field types


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Coefficients ``coef[c, m, n, k]`` of a real horizontal velocity."""

    coef: np.ndarray
    grid: Grid

    def __post_init__(self):
        if self.coef.shape != self.grid.shape:
            raise ValueError(f"coefficient shape {self.coef.shape} != {self.grid.shape}")

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralField":
        return cls(np.zeros(grid.shape, dtype=complex), grid)

    @classmethod
    def single_mode(cls, grid: Grid, m: int, n: int, k: int, c: int,
                    value: complex = 1.0) -> "SpectralField":
        """Unit (or ``value``) coefficient at (m, n, k, c) plus its conjugate partner."""
        a = np.zeros(grid.shape, dtype=complex)
        i, j = grid.index(m, n)
        a[c, i, j, k] += value
        a[c, grid.neg_m[i], grid.neg_n[j], k] += np.conj(value)
        if (i, j) == (0, 0):
            a[c, 0, 0, k] = value.real if isinstance(value, complex) else value
        return cls(a, grid)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self.grid.check(other.grid)
        return SpectralField(self.coef + other.coef, self.grid)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self.grid.check(other.grid)
        return SpectralField(self.coef - other.coef, self.grid)

    def __mul__(self, s: float) -> "SpectralField":
        return SpectralField(self.coef * s, self.grid)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(-self.coef, self.grid)

    def norm(self) -> float:
        return norm_l2(self)

    def is_hermitian(self) -> bool:
        return bool(np.array_equal(self.coef, conj_partner(self.coef, self.grid)))

    def copy(self) -> "SpectralField":
        return SpectralField(self.coef.copy(), self.grid)


@dataclass(frozen=True, eq=False)
class PhysicalField:
    """Real samples ``values[c, i, j, q]`` on the padded grid x vertical nodes.

    ``vertical`` names the vertical function class of the samples and selects
    the exact projection used by :func:`to_spectral`.
    """

    values: np.ndarray
    grid: Grid
    vertical: str = "sine"

    def __post_init__(self):
        g = self.grid
        if self.values.shape[1:] != (g.padM, g.padN, g.Q):
            raise ValueError(
                f"physical shape {self.values.shape} inconsistent with grid pads "
                f"({g.padM}, {g.padN}, {g.Q})")
        if self.vertical not in VERTICAL_CLASSES:
            raise ValueError(f"unknown vertical class {self.vertical!r}")

    def xyz(self):
        """Coordinates (x, y, z) of the sample points."""
        g = self.grid
        return np.arange(g.padM) / g.padM, np.arange(g.padN) / g.padN, g.zq


@dataclass(frozen=True, eq=False)
class BarotropicField:
    """2D Fourier coefficients ``coef[c, m, n]`` of a z-independent field on G."""

    coef: np.ndarray
    grid: Grid

    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.coef) ** 2))

    def grad_norm_sq(self) -> float:
        return float(np.sum(self.grid.kh2 * np.abs(self.coef) ** 2))

    def divergence(self) -> np.ndarray:
        g = self.grid
        return 1j * (g.kx * self.coef[0] + g.ky * self.coef[1])


# ---------------------------------------------------------------------------
# operations


def to_physical(v: SpectralField, vertical: str = "sine") -> PhysicalField:
    """Evaluate ``v`` on the padded horizontal grid and the vertical nodes.

    ``vertical="cosine"`` evaluates the z-derivative instead.
    """
    g = v.grid
    mat = {"sine": g.S, "cosine": g.Sd}[vertical]
    phys = vertical_apply(mat, coef_to_levels(v.coef, g))  # (2, Q, padM, padN)
    return PhysicalField(np.ascontiguousarray(np.moveaxis(phys, 1, -1)), g, vertical)


def to_spectral(p: PhysicalField) -> SpectralField:
    """Galerkin projection of physical samples onto the basis."""
    g = p.grid
    levels = vertical_apply(g.proj[p.vertical], np.moveaxis(p.values, -1, 1))
    return SpectralField(levels_to_coef(levels, g), g)


def inner_l2(u: SpectralField, v: SpectralField) -> float:
    """L2(Omega) inner product (Parseval over the orthonormal basis)."""
    u.grid.check(v.grid)
    return float(np.vdot(u.coef.ravel(), v.coef.ravel()).real)


def norm_l2(v: SpectralField) -> float:
    return float(np.sqrt(inner_l2(v, v)))


def norm_grad_sq(v: SpectralField) -> float:
    """||grad v||_2^2 including the vertical derivative."""
    return float(np.sum(v.grid.lam * (np.abs(v.coef) ** 2)))


def vertical_average(v: SpectralField) -> BarotropicField:
    """Vertical mean (1/h) * integral of v dz, as 2D Fourier coefficients."""
    return BarotropicField(v.coef @ v.grid.cbar, v.grid)


def random_field(grid: Grid, rng: np.random.Generator, decay: float = 0.0,
                 scale: float = 1.0) -> SpectralField:
    """Random real field; ``decay`` > 0 damps mode (m,n,k) by exp(-decay*sqrt(lam))."""
    a = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    if decay:
        a *= np.exp(-decay * np.sqrt(grid.lam / grid.lam_min()))
    a = hermitize(a, grid)
    nrm = np.sqrt(np.sum(np.abs(a) ** 2))
    return SpectralField(a * (scale / nrm if nrm else 0.0), grid)


def regrid(v: SpectralField, grid: Grid) -> SpectralField:
    """Copy the modes common to ``v.grid`` and ``grid``; others are zero.

    Embedding into a finer grid is exact; restriction to a coarser grid is the
    L2-orthogonal truncation (and may break the constraint, see ``project``).
    """
    src = v.grid
    if src.h != grid.h:
        raise GridMismatchError(f"cannot regrid between depths {src.h} and {grid.h}")
    out = np.zeros(grid.shape, dtype=complex)
    hm = min(src.M, grid.M) // 2
    hn = min(src.N, grid.N) // 2
    K = min(src.K, grid.K)
    ms = np.arange(-hm + 1, hm)
    ns = np.arange(-hn + 1, hn)
    out[np.ix_([0, 1], ms % grid.M, ns % grid.N, range(K))] = \
        v.coef[np.ix_([0, 1], ms % src.M, ns % src.N, range(K))]
    return SpectralField(out, grid)
