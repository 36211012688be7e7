"""Configuration, experiment pipelines, fitting and the command-line interface."""

from .config import ExperimentConfig, from_dict, load_config
from .fitting import FitResult, SinusoidFit, fit_sinusoid_decay, mle_fit_exponential
from .pipelines import (run_detect_calibration, run_gate_design, run_parity_scan,
                        run_prep_fidelity, run_storage_scan)
from .cli import cli_main

__all__ = [
    "ExperimentConfig", "from_dict", "load_config", "FitResult", "SinusoidFit",
    "fit_sinusoid_decay", "mle_fit_exponential", "run_prep_fidelity", "run_storage_scan",
    "run_parity_scan", "run_gate_design", "run_detect_calibration", "cli_main",
]
