"""Varying-coefficient additive models with latent group structure for
clustered time series."""

from .basis import BSplineBasis, CenteringRecord, build_basis, center
from .data import (
    ClusterSeries,
    ModelSpec,
    PanelDataset,
    ScalingRecord,
    build_lag_frames,
    scale_to_unit,
)
from .estimates import (
    FittedModel,
    FunctionEstimate,
    PairPartition,
    VarianceComponents,
)
from .estimation import (
    InitialEstimates,
    SolverOptions,
    estimate_variance_components,
    fitted_residuals,
    initial_fit,
    predict,
    refine_variance_loop,
    weighted_final_fit,
    working_independence_fit,
)
from .estimator import GroupedVCAM
from .exceptions import (
    ConfigurationError,
    DataError,
    NumericalError,
    PanelVCAMError,
)
from .metrics import (
    MiseReport,
    NmiReport,
    mise,
    nmi,
    rolling_prediction_error,
    rolling_prediction_report,
)
from .simulation import SimulationConfig, StudyResult, generate, run_study
from .structure import (
    ThresholdConfig,
    greedy_partition,
    l2_sq_distance,
    l2_sq_norm,
    refine_partition,
    select_threshold_cv,
)
from .tuning import BicTrace, bic_select_final_basis, bic_select_knots

__version__ = "0.1.0"

__all__ = [
    "BSplineBasis",
    "BicTrace",
    "CenteringRecord",
    "ClusterSeries",
    "ConfigurationError",
    "DataError",
    "FittedModel",
    "FunctionEstimate",
    "GroupedVCAM",
    "InitialEstimates",
    "MiseReport",
    "ModelSpec",
    "NmiReport",
    "NumericalError",
    "PairPartition",
    "PanelDataset",
    "PanelVCAMError",
    "ScalingRecord",
    "SimulationConfig",
    "SolverOptions",
    "StudyResult",
    "ThresholdConfig",
    "VarianceComponents",
    "build_basis",
    "build_lag_frames",
    "center",
    "estimate_variance_components",
    "fitted_residuals",
    "generate",
    "greedy_partition",
    "initial_fit",
    "l2_sq_distance",
    "l2_sq_norm",
    "mise",
    "nmi",
    "predict",
    "refine_partition",
    "refine_variance_loop",
    "rolling_prediction_error",
    "rolling_prediction_report",
    "run_study",
    "scale_to_unit",
    "select_threshold_cv",
    "weighted_final_fit",
    "working_independence_fit",
    "__version__",
]
