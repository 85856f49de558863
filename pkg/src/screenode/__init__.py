"""Simulation and analysis toolkit for perturbation screens modelled as trajectory maps."""
from .errors import ConfigError, ScreenError
from .experiment import (
    BASELINE,
    NO_PERTURBATION,
    ExperimentCondition,
    MediaCondition,
    PathLabel,
    PerturbationMap,
    PerturbStatus,
    apply_media,
    apply_perturbation,
    classify_path,
    compose,
    enumerate_conditions,
    wait,
)
from .grn import GrnSpec

__version__ = "0.1.0"

__all__ = [
    "BASELINE",
    "NO_PERTURBATION",
    "ConfigError",
    "ExperimentCondition",
    "GrnSpec",
    "MediaCondition",
    "PathLabel",
    "PerturbStatus",
    "PerturbationMap",
    "ScreenError",
    "apply_media",
    "apply_perturbation",
    "classify_path",
    "compose",
    "enumerate_conditions",
    "wait",
]
