"""fedpost Package

Federated learning simulator with local equalized-odds debiasing: FedAvg
training followed by a per-client derived predictor or final-layer
fine-tuning.
"""
from .data import CELL_ORDER, Dataset, DatasetSource, SyntheticSpec, load_dataset
from .partition import ClientPartition, DegeneratePolicy, split_clients
from .model import ModelWeights, TrainConfig, init_model, predict_labels
from .federation import FedConfig, count_communication, fedavg_train
from .metrics import GroupRates, confusion_by_group, eod
from .postprocess import DerivedPredictor, JointStats, fit_derived_predictor
from .finetune import FtConfig, finetune_last_layer
from .runner import (
    ExperimentConfig,
    ExperimentReport,
    run_experiment,
    run_sweep,
    write_report,
    write_reports,
)

__version__ = "0.1.0"

__all__ = [
    "CELL_ORDER",
    "Dataset",
    "DatasetSource",
    "SyntheticSpec",
    "load_dataset",
    "ClientPartition",
    "DegeneratePolicy",
    "split_clients",
    "ModelWeights",
    "TrainConfig",
    "init_model",
    "predict_labels",
    "FedConfig",
    "count_communication",
    "fedavg_train",
    "GroupRates",
    "confusion_by_group",
    "eod",
    "DerivedPredictor",
    "JointStats",
    "fit_derived_predictor",
    "FtConfig",
    "finetune_last_layer",
    "ExperimentConfig",
    "ExperimentReport",
    "run_experiment",
    "run_sweep",
    "write_report",
    "write_reports",
]
