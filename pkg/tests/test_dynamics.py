import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hpe.basis import SpectralField, inner_l2, make_grid, norm_grad_sq, norm_l2, random_field
from hpe.constraint import project
from hpe.dynamics import (
    ForcingMode,
    ForcingSpec,
    ForcingTruncationWarning,
    advect,
    compile_forcing,
    compute_w,
    forcing_eval,
    nonlinear_term,
    preset,
    trilinear_estimate_report,
)
from oracles import advect_oracle, gauss_z


# -- vertical velocity ----------------------------------------------------------

def test_w_zero(g6):
    assert not np.any(compute_w(SpectralField.zeros(g6)).wc)


def test_w_bottom_single_mode():
    g = make_grid(6, 6, 4, 1.0)
    v = SpectralField.single_mode(g, 1, 0, 0, 0)
    w = compute_w(v)
    i, j = g.index(1, 0)
    # w(-h) = integral of div_H v over the column = h * i k . vbar
    expect = 2j * np.pi * np.sqrt(2) * 2 / np.pi
    assert w.column(-1.0)[i, j] == pytest.approx(expect, rel=1e-14)
    assert abs(w.column(0.0)).max() <= 1e-15
    assert abs(compute_w(project(v)).column(-1.0)).max() <= 1e-13


def test_w_matches_column_integral(g6, rng):
    v = project(random_field(g6, rng))
    w = compute_w(v)
    zs = np.array([-0.9, -0.5, -0.123, -0.01])
    for z in zs:
        # integral_z^0 of div_H v by Gauss-Legendre on [z, 0]
        x, wt = np.polynomial.legendre.leggauss(40)
        zz = 0.5 * z * (1 - x)
        ww = -0.5 * z * wt
        psi = np.sqrt(2 / g6.h) * np.sin(np.outer(zz + g6.h, g6.mu))
        div = 1j * (g6.kx[..., None] * v.coef[0] + g6.ky[..., None] * v.coef[1])
        ref = div @ (ww @ psi)
        np.testing.assert_allclose(w.column(z), ref, atol=1e-12)


# -- advection ----------------------------------------------------------------

def test_null_case_shear_in_x():
    g = make_grid(8, 8, 5)
    a = np.zeros(g.shape, dtype=complex)
    i, _ = g.index(1, 0)
    a[1, i, 0, :] = [0.3, -0.2, 0.1, 0.05, 0.0]
    a[1, g.neg_m[i], 0, :] = np.conj(a[1, i, 0, :])
    assert np.abs(nonlinear_term(SpectralField(a, g)).coef).max() <= 1e-15


def test_advect_matches_oracle(rng):
    g = make_grid(6, 6, 4)
    v, phi = random_field(g, rng), random_field(g, rng)
    got = advect(v, phi).coef
    ref = advect_oracle(v.coef, phi.coef, g)
    assert np.abs(got - ref).max() <= 1e-11 * max(1.0, np.abs(ref).max())


@pytest.mark.parametrize("res", [(8, 8, 6), (16, 16, 12)])
def test_skew_symmetry(res):
    g = make_grid(*res)
    rng = np.random.default_rng(res[0])
    for _ in range(5):
        v = project(random_field(g, rng))
        assert abs(inner_l2(nonlinear_term(v), v)) <= 1e-12 * norm_l2(v) * norm_grad_sq(v)


@given(seed=st.integers(0, 2**32 - 1))
def test_duality(seed):
    g = make_grid(8, 8, 6)
    rng = np.random.default_rng(seed)
    v, phi = project(random_field(g, rng)), random_field(g, rng)
    lhs = inner_l2(advect(v, phi), v)
    rhs = -inner_l2(advect(v, v), phi)
    scale = norm_l2(v) * math.sqrt(norm_grad_sq(v) * norm_grad_sq(phi))
    assert abs(lhs - rhs) <= 1e-12 * scale


def test_split_terms_sum(g8, rng):
    v, phi = random_field(g8, rng), random_field(g8, rng)
    tot = advect(v, phi).coef
    parts = advect(v, phi, vertical=False).coef + advect(v, phi, horizontal=False).coef
    assert np.abs(tot - parts).max() <= 1e-14 * np.abs(tot).max()


def test_advect_output_hermitian(g8, rng):
    v = random_field(g8, rng)
    assert nonlinear_term(v).is_hermitian()


# -- forcing ------------------------------------------------------------------

def test_steady_forcing_time_independent(g6):
    fs = preset("channel_steady")
    a = forcing_eval(fs, 0.0, g6).coef
    for t in (0.3, 1.7, 11.0):
        assert np.array_equal(forcing_eval(fs, t, g6).coef, a)


@pytest.mark.parametrize("t", [0.0, 0.25, 0.375, 37 / 1024])
def test_harmonic_forcing_periodic(g6, t):
    fs = preset("channel_harmonic")
    assert np.array_equal(forcing_eval(fs, t + 1.0, g6).coef, forcing_eval(fs, t, g6).coef)


def test_constant_profile_coefficients():
    g = make_grid(6, 6, 5, 1.0)
    a = forcing_eval(preset("constant_column"), 0.0, g).coef
    i, _ = g.index(1, 0)
    k = np.arange(5)
    np.testing.assert_allclose(a[1, i, 0], np.sqrt(2) * 2 / ((2 * k + 1) * np.pi), rtol=1e-14)


def test_monomial_profile_matches_quadrature():
    g = make_grid(4, 4, 4, 2.0)
    fs = ForcingSpec((ForcingMode(0, 0, (1.0, 0.0), "monomial", degree=3),))
    a = forcing_eval(fs, 0.0, g).coef[0, 0, 0]
    z, wz = gauss_z(g, 200)
    psi = np.sqrt(2 / g.h) * np.sin(np.outer(z + g.h, g.mu))
    # mode (0, 0) and its own conjugate partner both land on the same slot
    np.testing.assert_allclose(a, 2 * (wz * z**3) @ psi, rtol=1e-13)


def test_forcing_norm_matches_coef(g8):
    cf = compile_forcing(preset("channel_harmonic", 3.0), g8)
    for t in (0.0, 0.1, 0.77):
        assert cf.norm(t) == pytest.approx(np.linalg.norm(cf.coef(t)), rel=1e-14)


def test_forcing_truncation_warns():
    g = make_grid(4, 4, 2)
    fs = ForcingSpec((ForcingMode(3, 0, (1.0, 0.0)),), T=1.0)
    with pytest.warns(ForcingTruncationWarning):
        cf = compile_forcing(fs, g)
    assert cf.is_zero


def test_forcing_json_round_trip():
    fs = preset("channel_harmonic", 2.5)
    assert ForcingSpec.from_json(fs.to_json()) == fs


def test_forcing_rejects_harmonics_without_period():
    with pytest.raises(ValueError):
        ForcingSpec((ForcingMode(1, 0, (1.0, 0.0), q=1),), T=None)


# -- trilinear estimates --------------------------------------------------------

def test_trilinear_zero_argument(g6, rng):
    z = SpectralField.zeros(g6)
    v = random_field(g6, rng)
    rep = trilinear_estimate_report(z, v, v)
    assert rep["lhs_horizontal"] == 0 and rep["lhs_vertical"] == 0
    assert rep["rhs_horizontal"] == 0 and rep["rhs_vertical"] == 0


def test_trilinear_diagonal_skew(g8, rng):
    v = project(random_field(g8, rng))
    rep = trilinear_estimate_report(v, v, v)
    assert rep["lhs_sum"] <= 1e-12 * norm_l2(v) * norm_grad_sq(v)


def test_trilinear_ratios_bounded_across_resolutions():
    worst = {}
    for M in (8, 12, 16):
        g = make_grid(M, M, M - 2)
        rng = np.random.default_rng(M)
        r = 0.0
        for _ in range(4):
            v1, v2, v3 = (project(random_field(g, rng, decay=0.3)) for _ in range(3))
            rep = trilinear_estimate_report(v1, v2, v3)
            r = max(r, rep["ratio_horizontal"], rep["ratio_vertical"])
        worst[M] = r
    assert all(np.isfinite(list(worst.values())))
    assert worst[16] <= 2.0 * worst[8], worst
