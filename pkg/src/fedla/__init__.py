"""Federated learning simulator comparing FedAvg, FedAvgL, FedLA, FedProx and FedProx+LA."""
from .aggregation import (
    STRATEGIES,
    ClientUpdate,
    aggregate,
    compute_fedavg_weights,
    compute_fedavgl_weights,
    compute_fedla_weights,
    weights_for,
)
from .config import RunManifest, parse_config
from .federation import ExperimentConfig, RunResult, run_centralized_baseline, run_experiment
from .report import run_sweep

__version__ = "0.1.0"
