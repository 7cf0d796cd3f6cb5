"""Structured Kingman coalescent, d-dimensional coagulation equations, and
their stochastic representations, with a cross-checking verification harness.
"""

from . import coag, coalescent, errors, harness, kingman, params, stochastic
from ._util import allocate_counts, replicate_rng
from .coag import (
    DiscreteSolution,
    OdePath,
    convolve,
    make_grid,
    psi,
    rhs_discrete,
    solve_discrete,
    solve_generating_function,
    solve_laplace_exponent,
    solve_total_mass,
)
from .coalescent import (
    CoalescentState,
    ColonyState,
    EmpiricalMeasure,
    Event,
    evaluate_generator,
    evaluate_limit_generator,
    event_rates,
    init_state,
    integrate,
    laplace_functional,
    mono_poly_split,
    simulate_until,
    step,
    to_empirical,
)
from .kingman import (
    CoupledPaths,
    EmigrantBoundPath,
    coupled_simulate,
    kingman_moment_bound,
    kingman_simulate,
    rate_bounds_check,
    simulate_emigration_bound,
)
from .params import (
    CRITICAL,
    LARGE,
    ModelParams,
    StationaryDistribution,
    make_params,
    params_from_dict,
    stationary_distribution,
    validate_params,
)
from .stochastic import (
    BranchingParams,
    DiffusionParams,
    PmfEstimate,
    branching_params,
    diffusion_params,
    entrance_law_estimate,
    estimate_pmf,
    euler_maruyama,
    feller_paths,
    simulate_branching,
)

__version__ = "0.1.0"
