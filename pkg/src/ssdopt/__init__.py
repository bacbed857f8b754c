"""Sketched derivative-free optimization.

Stochastic subspace descent estimates a few random directional derivatives
per iteration instead of a full gradient, with an optional variance-reduced
epoch scheme, full-gradient baselines, and a benchmarking harness built
around evaluation counts.
"""

__version__ = "0.1.0"

from .baselines import run_fd_bfgs, run_fd_gd
from .bench import (
    ExperimentSpec,
    PerformanceProfile,
    ProblemSpec,
    SolverSetup,
    TraceRecord,
    estimate_linear_rate,
    evals_to_threshold,
    export_traces,
    import_traces,
    performance_profile,
    profile_from_counts,
    run_experiment,
)
from .errors import (
    BudgetError,
    ConfigurationError,
    EvaluationError,
    LineSearchError,
    NoSuccessError,
)
from .oracle import FdScheme, default_step, directional_derivatives, full_gradient_fd
from .problems import (
    Objective,
    isotropic_quadratic,
    nesterov_worst,
    rank_deficient_least_squares,
)
from .sketch import (
    RngStream,
    Sketch,
    draw,
    draw_coordinate_block,
    draw_gaussian,
    draw_haar,
    sample_gaussian,
    sample_haar,
)
from .ssd import (
    ArmijoStep,
    FixedStep,
    RunTrace,
    SsdConfig,
    TheoreticalStep,
    TraceEntry,
    convex_bound,
    rate_bound_pl,
    run_ssd,
    ssd_step,
    theoretical_step,
)
from .vrssd import (
    AnchorState,
    VrssdConfig,
    cmse,
    eta_value,
    rate_bound_vrssd,
    run_vrssd,
    vrssd_inner_step,
)

__all__ = [
    "AnchorState",
    "ArmijoStep",
    "BudgetError",
    "ConfigurationError",
    "EvaluationError",
    "ExperimentSpec",
    "FdScheme",
    "FixedStep",
    "LineSearchError",
    "NoSuccessError",
    "Objective",
    "PerformanceProfile",
    "ProblemSpec",
    "RngStream",
    "RunTrace",
    "Sketch",
    "SolverSetup",
    "SsdConfig",
    "TheoreticalStep",
    "TraceEntry",
    "TraceRecord",
    "VrssdConfig",
    "cmse",
    "convex_bound",
    "default_step",
    "directional_derivatives",
    "draw",
    "draw_coordinate_block",
    "draw_gaussian",
    "draw_haar",
    "estimate_linear_rate",
    "eta_value",
    "evals_to_threshold",
    "export_traces",
    "full_gradient_fd",
    "import_traces",
    "isotropic_quadratic",
    "nesterov_worst",
    "performance_profile",
    "profile_from_counts",
    "rank_deficient_least_squares",
    "rate_bound_pl",
    "rate_bound_vrssd",
    "run_experiment",
    "run_fd_bfgs",
    "run_fd_gd",
    "run_ssd",
    "run_vrssd",
    "sample_gaussian",
    "sample_haar",
    "ssd_step",
    "theoretical_step",
    "vrssd_inner_step",
]
