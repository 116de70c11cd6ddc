"""Experiment presets, metrics, result files and the command line."""

from .config import PRESETS, ConfigError, ExperimentConfig, load_config, resolve
from .metrics import fixed_eval_schedule, iqr_bands, moving_average
from .runner import HarnessError, run_experiment

__all__ = ["PRESETS", "ConfigError", "ExperimentConfig", "HarnessError", "fixed_eval_schedule",
           "iqr_bands", "load_config", "moving_average", "resolve", "run_experiment"]
