"""Sequential multiple testing across independent data streams.

Stopping rules that test many streams at once under mistake budgets,
with closed-form and Monte-Carlo threshold calibration, first-order
optimality references, and a reproducible experiment harness.
"""

from .calibration import (
    CalibrationError,
    CalibrationReport,
    Thresholds,
    analytic_threshold_gmis,
    analytic_thresholds_gfwer,
    calibrate_bisection,
    error_configs,
    mc_error_estimate,
    min_fixed_n,
)
from .config import ConfigError, build_spec, load_config
from .engine import TrialCounters, simulate, simulate_paths
from .figures import emit_figure, figure_ids
from .harness import (
    BOUNDARY_SWEEP,
    ExperimentSpec,
    ProcedureRequest,
    RunResult,
    SpecError,
    resolve_procedure,
    run_experiment,
    run_trial,
    spec_hash,
    validate_spec,
)
from .models import (
    Bernoulli,
    CompositeGaussianMean,
    GaussianMean,
    StreamBank,
)
from .procedures import (
    AsymSumIntersection,
    Intersection,
    Leap,
    LeapStar,
    Mnp,
    SumIntersection,
)
from .theory import (
    GfwerBudget,
    GmisBudget,
    InformationProfile,
    big_l,
    d_a_k,
    fixed_sample_ratios,
    solve_h_d,
)

__all__ = [
    "AsymSumIntersection",
    "Bernoulli",
    "BOUNDARY_SWEEP",
    "CalibrationError",
    "CalibrationReport",
    "CompositeGaussianMean",
    "ConfigError",
    "ExperimentSpec",
    "GaussianMean",
    "GfwerBudget",
    "GmisBudget",
    "InformationProfile",
    "Intersection",
    "Leap",
    "LeapStar",
    "Mnp",
    "ProcedureRequest",
    "RunResult",
    "SpecError",
    "StreamBank",
    "SumIntersection",
    "Thresholds",
    "TrialCounters",
    "analytic_threshold_gmis",
    "analytic_thresholds_gfwer",
    "big_l",
    "build_spec",
    "calibrate_bisection",
    "d_a_k",
    "emit_figure",
    "error_configs",
    "figure_ids",
    "fixed_sample_ratios",
    "load_config",
    "mc_error_estimate",
    "min_fixed_n",
    "resolve_procedure",
    "run_experiment",
    "run_trial",
    "simulate",
    "simulate_paths",
    "solve_h_d",
    "spec_hash",
    "validate_spec",
]
