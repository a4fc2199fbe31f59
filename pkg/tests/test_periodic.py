import math

import numpy as np
import pytest
from scipy.integrate import quad

from hpe.basis import SpectralField, make_grid, norm_l2, random_field
from hpe.constraint import bordered_solve_field, constraint_residual, project
from hpe.dynamics import ForcingMode, ForcingSpec, compile_forcing, nonlinear_term, preset
from hpe.integrator import integrate
from hpe.periodic import (
    NonConvergenceError,
    ball_radius,
    certify_ball,
    newton_shoot,
    picard_solve,
    poincare_map,
    steady_solve,
)

ZERO = ForcingSpec((), T=1.0, name="zero")


# -- Poincare map ---------------------------------------------------------------

def test_map_single_mode_decay(g6):
    a = SpectralField.single_mode(g6, 0, 1, 1, 0, 0.3)
    i, j = g6.index(0, 1)
    lam = g6.lam[i, j, 1]
    T = 0.1
    dt = 1e-3
    Sa = poincare_map(a, T, dt, ZERO)
    cn = ((1 - dt * lam / 2) / (1 + dt * lam / 2)) ** round(T / dt)
    assert norm_l2(Sa) == pytest.approx(cn * norm_l2(a), rel=1e-12)
    # CN phase error: lam^3 dt^2 T / 12 in the exponent
    assert norm_l2(Sa) == pytest.approx(math.exp(-lam * T) * norm_l2(a), rel=lam**3 * dt**2 * T / 6)


def test_map_zero_fixed(g6):
    assert not np.any(poincare_map(SpectralField.zeros(g6), 0.1, 1e-3, ZERO).coef)


def test_map_semigroup_bit_exact(g8, rng):
    a = project(random_field(g8, rng))
    fs = preset("channel_steady")
    T = 0.05
    s2 = poincare_map(poincare_map(a, T, 1e-3, fs), T, 1e-3, fs)
    direct, _, _ = integrate(a, 0.0, 2 * T, 1e-3, fs)
    assert np.array_equal(s2.coef, direct.v.coef)


# -- ball radius ----------------------------------------------------------------

def test_radius_zero_forcing():
    assert ball_radius(ZERO, 1.0) == 0.0


@pytest.mark.parametrize("h", [0.5, 1.0, 2.0])
def test_radius_constant_norm_closed_form(h):
    fs = preset("constant_column", 3.0)
    F = compile_forcing(fs, make_grid(4, 4, 64, h), warn=False).norm(0.0)
    assert ball_radius(fs, 1.0, h) == pytest.approx(h * h * F, rel=1e-10)


def test_radius_time_harmonic_quadrature():
    fs = ForcingSpec((ForcingMode(1, 0, (0.0, 1.0)), ForcingMode(1, 0, (0.0, 0.6), q=1)),
                     T=1.0)
    g = make_grid(4, 4, 4)
    cf = compile_forcing(fs, g)
    h, T = 1.0, 1.0
    num, _ = quad(lambda s: math.exp(2 * (s - T) / h**2) * cf.norm(s), 0, T,
                  epsabs=0, epsrel=1e-13, limit=200)
    expect = 2 * num / -math.expm1(-2 * T / h**2)
    assert ball_radius(fs, T, h, grid=g) == pytest.approx(expect, rel=1e-10)


def test_certify_unforced(g6):
    assert certify_ball(ZERO, 0.2, 1e-3, 1.0, samples=4, grid=g6)


def test_certify_small_radius_fails(g6):
    fs = preset("channel_harmonic", 50.0)
    R = 0.01 * ball_radius(fs, 1.0, g6.h, grid=g6)
    cert = certify_ball(fs, 1.0, 2e-3, R, samples=3, grid=g6)
    assert not cert and cert.offending == [0, 1, 2] and cert.worst_ratio > 1


def test_certify_constant_norm(g6):
    fs = ForcingSpec(preset("constant_column").modes, T=1.0)
    R = ball_radius(fs, 1.0, g6.h, grid=g6)
    cert = certify_ball(fs, 1.0, 1e-3, R, samples=4, grid=g6)
    assert cert and cert.worst_ratio < 1


# -- Picard ---------------------------------------------------------------------

def test_picard_unforced_rate(g6, rng):
    a0 = project(random_field(g6, rng))
    T = 0.5
    res = picard_solve(a0, T, 1e-3, ZERO, tol=1e-9)
    assert res.converged and norm_l2(res.a_star) <= 1e-9
    r = np.array(res.residuals)
    rate = r[1:] / r[:-1]
    rho = math.exp(-g6.lam_min() * T)
    assert np.all(rate <= rho * (1 + 1e-3))
    assert res.iterations <= math.ceil(math.log(1e-9 / r[0]) / math.log(rho)) + 1


def test_picard_small_forcing_linear_response():
    g = make_grid(6, 6, 4)
    eps = 1e-3
    fs = ForcingSpec((ForcingMode(1, 0, (0.0, eps), q=1),), T=1.0)
    res = picard_solve(SpectralField.zeros(g), 1.0, 1e-3, fs, tol=1e-13)
    i, j = g.index(1, 0)
    exact = eps / (g.lam[i, j, 0] + 2j * math.pi)
    got = res.a_star.coef[1, i, j, 0]
    assert abs(got - exact) <= 3e-6 * abs(exact) + eps**2


def test_picard_restart_zero_iterations(g6):
    fs = preset("channel_harmonic")
    res = picard_solve(SpectralField.zeros(g6), None, 2e-3, fs, tol=1e-9)
    again = picard_solve(res.a_star, None, 2e-3, fs, tol=1e-9)
    assert again.iterations == 0 and again.orbit_check_passed


def test_picard_nonconvergence(g6):
    with pytest.raises(NonConvergenceError) as e:
        picard_solve(SpectralField.zeros(g6), None, 2e-3, preset("channel_harmonic"),
                     tol=1e-14, maxit=1)
    assert len(e.value.residuals) == 2


# -- Newton -------------------------------------------------------------------

def test_newton_unforced(g6, rng):
    a0 = project(random_field(g6, rng))
    T = 0.2
    res = newton_shoot(a0, T, 2e-3, ZERO, tol=1e-10)
    assert res.converged and res.iterations <= 3
    # |a| <= |S(a) - a| / (1 - rho) for the linear contraction S
    assert norm_l2(res.a_star) <= 1e-10 / (1 - math.exp(-g6.lam_min() * T))


def test_newton_beats_picard_deep_channel():
    # in a deep channel the barotropic-free column modes contract slowly
    g = make_grid(4, 4, 2, 3.0)
    fs = ForcingSpec((ForcingMode(0, 0, (1.0, 0.5), k=0, q=1),
                      ForcingMode(1, 0, (0.0, 1.0), k=1, q=1)), T=1.0)
    a0 = SpectralField.zeros(g)
    pic = picard_solve(a0, None, 0.02, fs, tol=1e-9, maxit=400, verify=False)
    new = newton_shoot(a0, None, 0.02, fs, tol=1e-9, verify=False)
    assert pic.iterations > 50
    assert new.iterations <= 10
    assert norm_l2(pic.a_star - new.a_star) <= 1e-8


def test_newton_postcondition(g6):
    fs = preset("channel_harmonic", 3.0)
    res = newton_shoot(SpectralField.zeros(g6), None, 2e-3, fs, tol=1e-9)
    Sa = poincare_map(res.a_star, None, 2e-3, fs)
    assert norm_l2(Sa - res.a_star) <= 1e-9
    assert res.orbit_check_passed and res.dissipation.passed
    assert constraint_residual(res.a_star) <= 1e-12


def test_shoot_result_summary_json(g6, tmp_path):
    res = newton_shoot(SpectralField.zeros(g6), None, 2e-3, preset("channel_harmonic"), tol=1e-9)
    import json
    d = json.loads(res.to_json(tmp_path / "s.json").read_text())
    assert d["converged"] and d["residuals"][-1] <= 1e-9


# -- steady -------------------------------------------------------------------

def test_steady_zero(g6):
    res = steady_solve(ForcingSpec(), g6)
    v, p = res
    assert not np.any(v.coef) and not np.any(p.pi)


def _two_mode(g, eps):
    i, j = g.index(1, 0)
    k, l = g.index(0, 1)
    fs = ForcingSpec((ForcingMode(1, 0, (0.0, eps * g.lam[i, j, 0]), k=0),
                      ForcingMode(0, 1, (eps * g.lam[k, l, 1], 0.0), k=1)))
    phi = SpectralField.single_mode(g, 1, 0, 0, 1) + SpectralField.single_mode(g, 0, 1, 1, 0)
    return fs, phi


def test_steady_perturbation_oracle():
    g = make_grid(6, 6, 4)
    _, phi = _two_mode(g, 1.0)
    # second-order term: the constrained Stokes response to -N(phi)
    v2 = SpectralField(bordered_solve_field(g.lam, -nonlinear_term(phi).coef, g)[0], g)
    assert norm_l2(v2) > 1e-3
    err1, err2 = [], []
    for eps in (4e-3, 2e-3, 1e-3):
        fs, _ = _two_mode(g, eps)
        v = steady_solve(fs, g, tol=1e-14).v
        err1.append(norm_l2(v - eps * phi))
        err2.append(norm_l2(v - eps * phi - eps**2 * v2))
    s1 = math.log2(err1[0] / err1[1]), math.log2(err1[1] / err1[2])
    s2 = math.log2(err2[0] / err2[1])
    assert all(1.7 <= s <= 2.3 for s in s1), s1
    assert s2 >= 2.7


def test_steady_fixed_point_and_pressure(g8):
    res = steady_solve(preset("channel_steady", 2.0), g8)
    assert res.residual <= 1e-10 and res.fixed_point_error <= 1e-8
    assert np.abs(res.pressure.pi).max() > 0


def test_steady_rejects_periodic(g6):
    with pytest.raises(ValueError):
        steady_solve(preset("channel_harmonic"), g6)
