"""Confidence calibration under binary supervision: models, training objectives,
post-hoc calibrators, information-theoretic limits and ensemble targets."""

from .data import Dataset, load_csv, make_channel, make_two_moons, save_csv, split
from .estimator import ConfidenceNetClassifier
from .exceptions import ConfigError, ContractError, CSVParseError, DomainError, FitError, TrainingError
from .metrics import EvalReport, evaluate, passes_gate
from .posthoc import (
    CalibrationMap,
    IsotonicCalibrator,
    PlattCalibrator,
    TemperatureScaler,
    apply_calibration,
    compression_report,
    fit_isotonic,
    fit_platt,
    fit_temperature,
)
from .training import METHODS, TrainConfig, train

__all__ = [
    "CSVParseError", "CalibrationMap", "ConfidenceNetClassifier", "ConfigError", "ContractError",
    "Dataset", "DomainError", "EvalReport", "FitError", "IsotonicCalibrator", "METHODS",
    "PlattCalibrator", "TemperatureScaler", "TrainConfig", "TrainingError", "apply_calibration",
    "compression_report", "evaluate", "fit_isotonic", "fit_platt", "fit_temperature", "load_csv",
    "make_channel", "make_two_moons", "passes_gate", "save_csv", "split", "train",
]
