"""Hybrid battery voltage modeling: SPMT and NDC physics with FNN correction."""

from .core import CurrentProfile, Dataset, SimTrace, current_at, rer, rmse, scale_profile
from .datagen import DriveCycle, TruthSpec, generate_aging_series, generate_truth, load_drive_cycle
from .exceptions import (AlignmentError, ConfigError, DataError, HybridLabError, NumericalError,
                         ParseError, SaturationError, SingularityError, TrainingError, WiringError)
from .fnn import FNNRegressor, FnnModel, TrainConfig
from .hybrid import FeatureSpec, HybridModel, HybridRegressor, evaluate, predict_voltage
from .ndc import NdcParams, NdcState, simulate_ndc
from .physics import default_params, simulate
from .spmt import SpmtParams, simulate_spmt

__version__ = "0.1.0"

__all__ = [
    "AlignmentError", "ConfigError", "CurrentProfile", "DataError", "Dataset", "DriveCycle",
    "FNNRegressor", "FeatureSpec", "FnnModel", "HybridLabError", "HybridModel", "HybridRegressor",
    "NdcParams", "NdcState", "NumericalError", "ParseError", "SaturationError", "SimTrace",
    "SingularityError", "SpmtParams", "TrainConfig", "TrainingError", "TruthSpec", "WiringError",
    "current_at", "default_params", "evaluate", "generate_aging_series", "generate_truth",
    "load_drive_cycle", "predict_voltage", "rer", "rmse", "scale_profile", "simulate",
    "simulate_ndc", "simulate_spmt",
]
