"""Learned subset selection through a differentiable facility-location layer."""

from .dataset import LabeledDataset, gen_synthetic, load_csv, save_csv
from .difflayer import differentiate_selection
from .estimator import HostCPSelector, SGDNetClassifier
from .exceptions import (ConfigError, ConvergenceError, DataFormatError, DegenerateKKTError,
                         NumericalError, ShapeError, StaleSolutionError)
from .harness import ExperimentConfig, Report, emit_report, ndcg_at_k, run_experiment
from .selection import SelectionProblem, SelectionSolution, hard_select, integral_oracle, solve_selection
from .trainer import TrainerConfig, TrainLog, extract_selection, reverse_selection, run

__version__ = "0.1.0"

__all__ = [
    "LabeledDataset", "gen_synthetic", "load_csv", "save_csv",
    "SelectionProblem", "SelectionSolution", "solve_selection", "hard_select", "integral_oracle",
    "differentiate_selection",
    "TrainerConfig", "TrainLog", "run", "extract_selection", "reverse_selection",
    "HostCPSelector", "SGDNetClassifier",
    "ExperimentConfig", "Report", "run_experiment", "emit_report", "ndcg_at_k",
    "ShapeError", "DataFormatError", "ConfigError", "NumericalError", "ConvergenceError",
    "DegenerateKKTError", "StaleSolutionError",
]
