import math
import warnings

import numpy as np
import pytest

from hpe.basis import SpectralField, make_grid, norm_l2, random_field
from hpe.constraint import constraint_residual, project
from hpe.dynamics import ForcingMode, ForcingSpec, preset
from hpe.integrator import (
    BlowUpError,
    CFLWarning,
    ConstraintWarning,
    EnergyLedger,
    State,
    Stepper,
    adjust_dt,
    energy_balance_residual,
    integrate,
    step,
)


def _shear_mode(g, value=1.0):
    # y-velocity varying in x: perpendicular to k_H, so constrained and N = 0
    return SpectralField.single_mode(g, 1, 0, 0, 1, value)


@pytest.mark.parametrize("dt", [1e-2, 1e-3])
def test_cn_decay_factor(g6, dt):
    v = _shear_mode(g6)
    s = step(State(0.0, v), dt)
    i, j = g6.index(1, 0)
    lam = g6.lam[i, j, 0]
    factor = (1 - dt * lam / 2) / (1 + dt * lam / 2)
    assert s.v.coef[1, i, j, 0] == pytest.approx(factor, rel=1e-14)


def test_cn_local_error_third_order(g6):
    i, j = g6.index(1, 0)
    lam = g6.lam[i, j, 0]
    errs = []
    for dt in (4e-3, 2e-3, 1e-3):
        a = step(State(0.0, _shear_mode(g6)), dt).v.coef[1, i, j, 0].real
        errs.append(abs(a - math.exp(-lam * dt)))
    rates = [math.log2(errs[k] / errs[k + 1]) for k in range(2)]
    assert all(2.8 <= r <= 3.2 for r in rates), rates


def test_zero_stays_zero(g6):
    s = step(State(0.0, SpectralField.zeros(g6)), 1e-3)
    assert not np.any(s.v.coef)


def test_constraint_preserved(g8, rng):
    v = project(random_field(g8, rng))
    s = State(0.0, v)
    fs = preset("channel_harmonic", 5.0)
    for _ in range(5):
        s = step(s, 1e-3, fs)
        assert constraint_residual(s.v) <= 1e-12 * norm_l2(s.v)


def test_unforced_energy_monotone(g8, rng):
    v = project(random_field(g8, rng, scale=3.0))
    _, led, _ = integrate(v, 0.0, 0.2, 1e-3)
    E = led.E
    assert np.all(E[1:] <= E[:-1] * (1 + 1e-10))


def test_linear_response_amplitude(g6):
    i, j = g6.index(1, 0)
    fs = ForcingSpec((ForcingMode(1, 0, (0.0, 2.0), q=1),), T=1.0)
    dt = 1e-3
    st, _, _ = integrate(SpectralField.zeros(g6), 0.0, 1.0, dt, fs, nonlinear=False,
                         sample_every=1000)
    lam, om = g6.lam[i, j, 0], 2 * np.pi
    exact = 2.0 / (lam + 1j * om)
    got = st.v.coef[1, i, j, 0]
    assert abs(got - exact) <= 3 * dt**2 * abs(exact) + abs(exact) * math.exp(-lam)


def test_energy_residual_order_linear(g6):
    fs = ForcingSpec((ForcingMode(1, 0, (0.0, 1.0), q=1),), T=1.0)
    r = [energy_balance_residual(integrate(_shear_mode(g6), 0.0, 0.5, dt, fs)[1])
         for dt in (4e-3, 2e-3)]
    assert 4 * 0.8 <= r[0] / r[1] <= 4 * 1.2


def test_energy_residual_order_nonlinear(g8, rng):
    v = project(random_field(g8, rng, decay=0.5))
    fs = preset("channel_harmonic", 2.0)
    r = [energy_balance_residual(integrate(v, 0.0, 0.25, dt, fs)[1]) for dt in (4e-3, 2e-3, 1e-3)]
    orders = [math.log2(r[k] / r[k + 1]) for k in range(2)]
    assert all(1.7 <= o <= 2.3 for o in orders), orders


def test_energy_residual_zero_trajectory(g6):
    _, led, _ = integrate(SpectralField.zeros(g6), 0.0, 0.01, 1e-3)
    assert energy_balance_residual(led) == 0.0


def test_energy_residual_needs_two_rows():
    with pytest.raises(ValueError):
        energy_balance_residual(EnergyLedger())


def test_adjust_dt():
    assert adjust_dt(1.0, 1e-3) == (1e-3, 1000)
    dt, n = adjust_dt(1.0, 0.3)
    assert n == 4 and dt == 0.25
    with pytest.raises(ValueError):
        adjust_dt(0.0, 1e-3)


def test_resume_bit_exact(g8, rng):
    v = project(random_field(g8, rng))
    fs = preset("channel_harmonic")
    full, _, _ = integrate(v, 0.0, 0.2, 1e-3, fs)
    half, _, _ = integrate(v, 0.0, 0.1, 1e-3, fs)
    rest, _, _ = integrate(half.v, half.t, 0.2, 1e-3, fs)
    assert rest.t == full.t
    assert np.array_equal(rest.v.coef, full.v.coef)


def test_step_matches_integrate(g6, rng):
    v = project(random_field(g6, rng))
    fs = preset("channel_harmonic")
    s = State(0.0, v)
    for _ in range(3):
        s = step(s, 1e-3, fs)
    ref, _, _ = integrate(v, 0.0, 3e-3, 1e-3, fs)
    assert np.array_equal(s.v.coef, ref.v.coef)


def test_ledger_sampling(g6):
    _, led, traj = integrate(SpectralField.zeros(g6), 0.0, 0.1, 1e-3, sample_every=10,
                             snapshots=True)
    assert len(led) == 11 and len(traj.snapshots) == 11
    np.testing.assert_allclose(led.t, np.linspace(0, 0.1, 11), atol=1e-15)


def test_unconstrained_initial_projected(g6, rng):
    v = random_field(g6, rng)
    with pytest.warns(ConstraintWarning):
        _, led, _ = integrate(v, 0.0, 0.01, 1e-3)
    assert led.metadata["warnings"]


def test_blow_up_detected():
    g = make_grid(8, 8, 4)
    fs = preset("channel_harmonic", 1e4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(BlowUpError):
            integrate(SpectralField.zeros(g), 0.0, 2.0, 0.05, fs)


def test_cfl_warning(g8, rng):
    v = project(random_field(g8, rng, scale=200.0))
    st = Stepper(g8, 0.05, None)
    with pytest.warns(CFLWarning):
        st.check_cfl(v.coef)


def test_forcing_phase_uses_global_index(g6):
    st = Stepper(g6, 0.25, preset("channel_harmonic"))
    assert np.array_equal(st.forcing_coef(1), st.forcing_coef(5))
