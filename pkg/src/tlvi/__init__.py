"""Targeted inference for conditional permutation variable importance."""

from .conddens import DensityConfig, GaussianLinearDensity, PartitionDensity
from .data import Dataset, SplitPlan, load_csv, make_split, write_csv
from .estimators import (
    EstimateReport,
    estimate_kfold,
    estimate_onestep,
    estimate_plugin,
    estimate_tmle,
    wald_ci,
)
from .learners import LearnerConfig
from .sim import DgpSpec, SimConfig, generate, run_experiment, true_importance

__all__ = [
    "DensityConfig", "GaussianLinearDensity", "PartitionDensity",
    "Dataset", "SplitPlan", "load_csv", "make_split", "write_csv",
    "EstimateReport", "estimate_kfold", "estimate_onestep", "estimate_plugin",
    "estimate_tmle", "wald_ci", "LearnerConfig",
    "DgpSpec", "SimConfig", "generate", "run_experiment", "true_importance",
]
__version__ = "0.1.0"
