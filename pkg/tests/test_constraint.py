import numpy as np
import pytest
from hypothesis import given, strategies as st

from hpe.basis import SpectralField, inner_l2, make_grid, norm_l2, random_field
from hpe.constraint import (
    bordered_solve_field,
    constraint_residual,
    pressure_field,
    pressure_from_multiplier,
    pressure_gradient_coef,
    project,
    solve_bordered,
)
from oracles import dense_null_projector


def _stack(a):  # (2, M, N, K) -> (M, N, 2K)
    return np.concatenate([a[0], a[1]], axis=-1)


def test_perpendicular_unchanged():
    g = make_grid(6, 6, 3)
    v = SpectralField.single_mode(g, 1, 0, 0, 1)  # k_H along x, component y
    assert np.array_equal(project(v).coef, v.coef)


def test_parallel_profile_removed():
    g = make_grid(6, 6, 3)
    a = np.zeros(g.shape, dtype=complex)
    i, j = g.index(1, 0)
    a[0, i, j] = g.cbar
    a[0, g.neg_m[i], j] = g.cbar
    assert norm_l2(project(SpectralField(a, g))) <= 1e-15


def test_project_matches_dense_oracle(rng):
    g = make_grid(6, 6, 8)
    v = random_field(g, rng)
    P = dense_null_projector(g)
    ref = np.einsum("mnij,mnj->mni", P, _stack(v.coef))
    np.testing.assert_allclose(_stack(project(v).coef), ref * g.active[..., None], atol=1e-13)


@given(seed=st.integers(0, 2**32 - 1))
def test_projector_properties(seed):
    g = make_grid(8, 6, 5)
    rng = np.random.default_rng(seed)
    u, v = random_field(g, rng), random_field(g, rng)
    pu = project(u)
    assert norm_l2(project(pu) - pu) <= 1e-14
    assert abs(inner_l2(pu, v) - inner_l2(u, project(v))) <= 1e-13
    assert norm_l2(pu) <= norm_l2(u) * (1 + 1e-15)
    assert constraint_residual(pu) <= 1e-13 * norm_l2(u)


def test_residual_zero_field(g6):
    assert constraint_residual(SpectralField.zeros(g6)) == 0.0


def test_residual_single_parallel_mode():
    g = make_grid(6, 6, 3, 1.0)
    a = np.zeros(g.shape, dtype=complex)
    a[0, g.index(1, 0)[0], 0, 0] = 1.0
    assert constraint_residual(SpectralField(a, g)) == pytest.approx(4 * np.sqrt(2), rel=1e-14)


# -- bordered solve -----------------------------------------------------------

def test_bordered_all_constraint():
    cb = make_grid(4, 4, 5).cbar
    a, gamma = solve_bordered(np.ones(5), cb.copy(), cb)
    assert np.abs(a).max() <= 1e-15 and gamma == pytest.approx(1.0, rel=1e-15)


def test_bordered_orthogonal_rhs():
    cb = make_grid(4, 4, 5).cbar
    b = np.random.default_rng(0).standard_normal(5)
    b -= (b @ cb) / (cb @ cb) * cb
    a, gamma = solve_bordered(np.ones(5), b, cb)
    np.testing.assert_allclose(a, b, atol=1e-15)
    assert abs(gamma) <= 1e-15


@given(seed=st.integers(0, 2**32 - 1), K=st.integers(1, 12))
def test_bordered_matches_dense_kkt(seed, K):
    rng = np.random.default_rng(seed)
    cb = make_grid(4, 4, K).cbar
    d = 1 + rng.random(K) * 10
    b = rng.standard_normal(K)
    a, gamma = solve_bordered(d, b, cb)
    kkt = np.zeros((K + 1, K + 1))
    kkt[:K, :K] = np.diag(d)
    kkt[:K, K] = cb
    kkt[K, :K] = cb
    ref = np.linalg.solve(kkt, np.append(b, 0.0))
    np.testing.assert_allclose(np.append(a, gamma), ref, atol=1e-13 * (1 + np.abs(ref).max()))
    assert abs(a @ cb) <= 1e-14 * (1 + np.abs(b).max())


def test_bordered_rejects_nonpositive():
    with pytest.raises(ValueError):
        solve_bordered(np.array([1.0, 0.0]), np.ones(2), np.ones(2))


def test_bordered_field_satisfies_constraint(g8, rng):
    v = random_field(g8, rng)
    d = 1 + 0.01 * g8.lam
    a, _ = bordered_solve_field(d, v.coef, g8)
    assert constraint_residual(SpectralField(a, g8)) <= 1e-13 * norm_l2(v)


# -- pressure -----------------------------------------------------------------

def test_pressure_zero_multiplier(g6):
    assert pressure_from_multiplier(0.0, 1, 2, g6) == 0


def test_pressure_inverse_relation():
    g = make_grid(6, 6, 3, 1.5)
    kn = 2 * np.pi * np.hypot(1, 2)
    assert pressure_from_multiplier(1j * kn * g.h, 1, 2, g) == pytest.approx(1.0, rel=1e-15)


def test_pressure_undefined_at_mean(g6):
    with pytest.raises(ValueError):
        pressure_from_multiplier(1.0, 0, 0, g6)


def test_steady_stokes_residual_orthogonality(g8, rng):
    """-Delta v + grad pi = f with the constraint: residual vanishes on every mode."""
    f = random_field(g8, rng)
    v, gamma = bordered_solve_field(g8.lam, f.coef, g8)
    p = pressure_field(gamma, g8)
    resid = g8.lam * v + pressure_gradient_coef(p) - f.coef
    assert np.abs(resid).max() <= 1e-12 * np.abs(f.coef).max()
    assert constraint_residual(SpectralField(v, g8)) <= 1e-13
