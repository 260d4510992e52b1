"""Numerical checks for Dirichlet Laplacians on domains with capacity-scaled ball holes."""
from .capacity import Ball, Indicator, UnionOfBalls, cap_ball, cap_numeric, potential_H
from .closeness import CutoffSpec, TestFunctionSet, apply_J1, estimate_closeness
from .geometry import AssumptionViolation, DomainSpec, build_holes, check_assumptions, interior_cells
from .harness import RunConfig, fit_rate, run_sweep
from .operators import (
    GridSpec,
    MaskedGrid,
    assemble_perforated_laplacian,
    assemble_schrodinger,
    cg_solve,
    extend,
    restrict,
)
from .potential import (
    Constant,
    GridSampled,
    HalfSpaceStep,
    Hoelder,
    RateParams,
    Smooth,
    compute_b,
    compute_D,
    compute_e,
    gamma_n,
)
from .spectra import dense_eigs, resolvent_diff_norm, smallest_eigs, spectral_metric

__version__ = "0.1.0"
