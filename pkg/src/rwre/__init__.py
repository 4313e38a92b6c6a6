"""Ballistic random walks in finite-state Markov environments.

Simulation of the walk and its branching-process representation, exact
prediction-filter likelihood of the left-steps data, maximum-likelihood
fitting with Hessian-based confidence regions, and a reproducible Monte
Carlo experiment harness.
"""

__version__ = "0.1.0"

from .env import (
    EnvKernel,
    ModelDiagnostics,
    ParamSpace,
    Support,
    diagnose,
    free_entries_space,
    preset_dna_unzipping,
    preset_iid_two_values,
    preset_two_state_chain,
    reversed_kernel,
    stationary_distribution,
)
from .errors import FilterDegeneracyError, ModelInvalidError, WalkTimeoutError
from .estimate import (
    ConfidenceRegion,
    MleResult,
    OptimizerConfig,
    chi2_quantile,
    confidence_region,
    fit,
)
from .harness import ExperimentPlan, ExperimentReport, load_plan, run_experiment, summarize
from .likelihood import (
    EmissionTable,
    LikelihoodEvaluation,
    PredictionFilter,
    filter_init,
    filter_step,
    log_emission,
    loglik,
)
from .walk import (
    EnvironmentPath,
    LeftStepsSequence,
    StationaryEstimate,
    WalkTrajectory,
    estimate_invariant_density,
    left_steps,
    left_steps_at,
    simulate_bpire,
    simulate_bpire_batch,
    simulate_environment,
    simulate_walk,
)

__all__ = [
    "__version__",
    "Support", "EnvKernel", "ParamSpace", "ModelDiagnostics",
    "stationary_distribution", "reversed_kernel", "diagnose",
    "preset_iid_two_values", "preset_two_state_chain", "preset_dna_unzipping",
    "free_entries_space",
    "EnvironmentPath", "WalkTrajectory", "LeftStepsSequence", "StationaryEstimate",
    "simulate_environment", "simulate_walk", "left_steps", "left_steps_at",
    "simulate_bpire", "simulate_bpire_batch", "estimate_invariant_density",
    "EmissionTable", "PredictionFilter", "LikelihoodEvaluation",
    "log_emission", "filter_init", "filter_step", "loglik",
    "OptimizerConfig", "MleResult", "ConfidenceRegion",
    "fit", "confidence_region", "chi2_quantile",
    "ExperimentPlan", "ExperimentReport", "load_plan", "run_experiment", "summarize",
    "ModelInvalidError", "WalkTimeoutError", "FilterDegeneracyError",
]
