"""Curvature-penalized MAP dose-response estimation and simulation."""

from .curvature import DoseGrid, second_difference, total_curvature
from .inference import (
    CalibrationResult,
    CalibrationSetup,
    MedEstimate,
    MedSpec,
    calibrate_critical_value,
    detect_poc,
    estimate_med,
    interpolate_curve,
    test_statistic,
)
from .kernel import active_backend
from .posterior import (
    LatentPoint,
    ObjectiveSpec,
    PriorSet,
    TrialDataset,
    log_likelihood,
    log_posterior,
    log_prior,
    pack_objective,
)
from .shapes import (
    FAMILIES,
    REFERENCE_MED,
    ShapeSpec,
    calibrate_shape,
    eval_shape,
    standard_shapes,
    true_med,
)
from .simharness import (
    MethodSpec,
    ScenarioConfig,
    ScenarioResult,
    med_metrics,
    roc_curve,
    run_scenario,
    tpr_at_fpr,
)
from .solver import (
    GradientCheckReport,
    MapFit,
    OracleFit,
    SolverOptions,
    grid_search_oracle,
    gradient_check,
    map_fit,
)
from .transform import DefaultModel, Theta, forward, inverse
from .trials import (
    SCENARIO_HISTORICAL_DOSES,
    TrialDesign,
    build_grid,
    generate_current_trial,
    generate_historical_trial,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "active_backend",
    # shapes
    "FAMILIES",
    "REFERENCE_MED",
    "ShapeSpec",
    "eval_shape",
    "true_med",
    "calibrate_shape",
    "standard_shapes",
    # transform
    "DefaultModel",
    "Theta",
    "forward",
    "inverse",
    # curvature
    "DoseGrid",
    "second_difference",
    "total_curvature",
    # posterior
    "TrialDataset",
    "PriorSet",
    "LatentPoint",
    "ObjectiveSpec",
    "log_prior",
    "log_likelihood",
    "log_posterior",
    "pack_objective",
    # solver
    "SolverOptions",
    "MapFit",
    "OracleFit",
    "GradientCheckReport",
    "map_fit",
    "grid_search_oracle",
    "gradient_check",
    # inference
    "MedSpec",
    "MedEstimate",
    "CalibrationSetup",
    "CalibrationResult",
    "test_statistic",
    "calibrate_critical_value",
    "detect_poc",
    "interpolate_curve",
    "estimate_med",
    # trials / harness
    "TrialDesign",
    "SCENARIO_HISTORICAL_DOSES",
    "build_grid",
    "generate_current_trial",
    "generate_historical_trial",
    "MethodSpec",
    "ScenarioConfig",
    "ScenarioResult",
    "run_scenario",
    "roc_curve",
    "tpr_at_fpr",
    "med_metrics",
]
