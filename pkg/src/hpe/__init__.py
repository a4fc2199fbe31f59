"""Spectral Galerkin solver for the viscous primitive equations with time-periodic forcing."""

from .basis import (
    Grid,
    GridMismatchError,
    SpectralField,
    inner_l2,
    make_grid,
    norm_grad_sq,
    norm_l2,
    random_field,
    regrid,
    to_physical,
    to_spectral,
)
from .constraint import PressureField, constraint_residual, project
from .dynamics import ForcingMode, ForcingSpec, advect, compute_w, nonlinear_term, preset
from .integrator import BlowUpError, EnergyLedger, State, Stepper, integrate, step
from .periodic import (
    NonConvergenceError,
    ball_radius,
    certify_ball,
    newton_shoot,
    picard_solve,
    poincare_map,
    steady_solve,
)

__version__ = "0.1.0"
