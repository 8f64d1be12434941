"""Weighted p-Laplacian gradient flow on rectangles with Neumann boundary conditions."""

from .analysis import (
    BoundsReport,
    DiagnosticsRecord,
    bounds_report,
    detect_extinction,
    diagnostics,
    dissipation_residual,
    extinction_bound,
    fit_decay_exponent,
    ode_comparison,
    poincare_bound,
    record,
    truncate,
)
from .energy import EnergyParams, energy, energy_gradient, energy_hessian_apply
from .estimator import PLaplacianFlow
from .flow import AdaptiveEps, FixedEps, StepParams, TimeGrid, Trajectory, evolve, resolvent
from .geometry import Grid, Mesh, average, build_grid, divergence, gradient, lq_norm, nodal_field
from .weights import (
    WeightField,
    checkerboard_weight,
    constant_weight,
    gamma_delta_p,
    gamma_tilde,
    p0,
    power_weight,
    table_weight,
)
from ._validation import ExcludedParameterError

__all__ = [
    "AdaptiveEps",
    "average",
    "bounds_report",
    "BoundsReport",
    "build_grid",
    "checkerboard_weight",
    "constant_weight",
    "detect_extinction",
    "diagnostics",
    "DiagnosticsRecord",
    "dissipation_residual",
    "divergence",
    "energy",
    "energy_gradient",
    "energy_hessian_apply",
    "EnergyParams",
    "evolve",
    "ExcludedParameterError",
    "extinction_bound",
    "fit_decay_exponent",
    "FixedEps",
    "gamma_delta_p",
    "gamma_tilde",
    "gradient",
    "Grid",
    "lq_norm",
    "Mesh",
    "nodal_field",
    "ode_comparison",
    "p0",
    "PLaplacianFlow",
    "poincare_bound",
    "power_weight",
    "record",
    "resolvent",
    "StepParams",
    "table_weight",
    "TimeGrid",
    "Trajectory",
    "truncate",
    "WeightField",
]

__version__ = "0.1.0"
