"""Extrapolation of RD treatment effects in multi-cutoff designs."""

from .dataset import (
    CutoffPair,
    Dataset,
    Observation,
    load_dataset,
    pool_normalize,
    save_dataset,
    subset,
)
from .errors import (
    DataError,
    EstimationError,
    InsufficientData,
    RdextrapError,
)
from .estimators import (
    CutoffEffect,
    DerivativeEqualityTest,
    Extrapolator,
    FixedEffectsRD,
    LocalRandomizationExtrapolator,
    ParallelTrendsTest,
    PooledEffect,
    WeightedAverageEffect,
    as_dataset,
)
from .extrapolation import (
    ExtrapolationResult,
    RDEffect,
    double_difference,
    estimate_cutoff_effect,
    extrapolate_covadj,
    extrapolate_fuzzy,
    extrapolate_polybias,
    extrapolate_sharp,
    extrapolation_grid,
    pooled_effect,
    weighted_average_effect,
)
from .falsification import global_parallel_test, local_derivative_test
from .fixedeffects import fe_effect_at, fit_fe_model, slope_equality_test
from .localrand import (
    LRResult,
    bergerboos_pvalue,
    build_window,
    lr_estimate,
    lr_inference,
    lr_sensitivity,
    neyman_test,
    randomization_pvalue,
)
from .locfit import (
    FitSpec,
    LocalFit,
    fit_covariance,
    local_fit,
    rbc_interval,
    select_bandwidth_mse,
)
from .simulate import (
    SimulationConfig,
    SimulationSummary,
    generate_sample,
    load_config,
    run_monte_carlo,
)

__version__ = "0.1.0"

__all__ = [
    "CutoffEffect",
    "CutoffPair",
    "DataError",
    "Dataset",
    "DerivativeEqualityTest",
    "EstimationError",
    "ExtrapolationResult",
    "Extrapolator",
    "FitSpec",
    "FixedEffectsRD",
    "InsufficientData",
    "LRResult",
    "LocalFit",
    "LocalRandomizationExtrapolator",
    "Observation",
    "ParallelTrendsTest",
    "PooledEffect",
    "RDEffect",
    "RdextrapError",
    "SimulationConfig",
    "SimulationSummary",
    "WeightedAverageEffect",
    "as_dataset",
    "bergerboos_pvalue",
    "build_window",
    "double_difference",
    "estimate_cutoff_effect",
    "extrapolate_covadj",
    "extrapolate_fuzzy",
    "extrapolate_polybias",
    "extrapolate_sharp",
    "extrapolation_grid",
    "fe_effect_at",
    "fit_covariance",
    "fit_fe_model",
    "generate_sample",
    "global_parallel_test",
    "load_config",
    "load_dataset",
    "local_derivative_test",
    "local_fit",
    "lr_estimate",
    "lr_inference",
    "lr_sensitivity",
    "neyman_test",
    "pool_normalize",
    "pooled_effect",
    "randomization_pvalue",
    "rbc_interval",
    "run_monte_carlo",
    "save_dataset",
    "select_bandwidth_mse",
    "slope_equality_test",
    "subset",
    "weighted_average_effect",
]
