"""Moment-constrained marginal distributionally robust Kalman filtering.

A static minimax MMSE estimator over a marginal moment-uncertainty set, its
recursive multi-sensor filter, baseline estimators, and a Monte-Carlo
tracking harness.
"""

from .errors import (
    EstimationError,
    InvalidInput,
    NonFiniteObjective,
    OracleUnsupported,
    ProjectionNotConverged,
    SingularBlock,
)
from .estimator import (
    AffineEstimator,
    estimate,
    evaluate_mse,
    posterior_cov,
    solve_static_estimator,
)
from .experiment import MseTable, run_comparison, static_demo, tune_gamma
from .filters import (
    FilterState,
    StateSpaceModel,
    ci_fuse,
    kf_step,
    local_kf_step,
    mdrkf_step,
    predict_sensor,
    robust_step_estimator,
)
from .linalg import (
    BlockLayout,
    extract_sensor_block,
    insert_sensor_block,
    psd_project,
    psd_sqrt,
    schur_trace,
    sym_eig,
    symmetrize,
)
from .simulate import (
    ExperimentConfig,
    constant_acceleration_model,
    counter_normal,
    load_config,
    simulate_truth,
)
from .solver import SolverConfig, SolverReport, brute_force_worst_case, solve_worst_case, supergradient
from .uncertainty import (
    GaussianMoments,
    SensorConstraint,
    UncertaintySet,
    assemble_nominal_joint,
    feasibility_residual,
    project_band,
    project_feasible,
    random_feasible_second_moment,
    validate,
)

__all__ = [
    "AffineEstimator",
    "BlockLayout",
    "EstimationError",
    "ExperimentConfig",
    "FilterState",
    "GaussianMoments",
    "InvalidInput",
    "MseTable",
    "NonFiniteObjective",
    "OracleUnsupported",
    "ProjectionNotConverged",
    "SensorConstraint",
    "SingularBlock",
    "SolverConfig",
    "SolverReport",
    "StateSpaceModel",
    "UncertaintySet",
    "assemble_nominal_joint",
    "brute_force_worst_case",
    "ci_fuse",
    "constant_acceleration_model",
    "counter_normal",
    "estimate",
    "evaluate_mse",
    "extract_sensor_block",
    "feasibility_residual",
    "insert_sensor_block",
    "kf_step",
    "load_config",
    "local_kf_step",
    "mdrkf_step",
    "posterior_cov",
    "predict_sensor",
    "project_band",
    "project_feasible",
    "psd_project",
    "psd_sqrt",
    "random_feasible_second_moment",
    "robust_step_estimator",
    "run_comparison",
    "schur_trace",
    "simulate_truth",
    "solve_static_estimator",
    "solve_worst_case",
    "static_demo",
    "supergradient",
    "sym_eig",
    "symmetrize",
    "tune_gamma",
    "validate",
]

__version__ = "0.1.0"
