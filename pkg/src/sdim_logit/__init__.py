"""Generative classifiers with a rejection option, derived from a frozen classifier's logits."""

from .attacks import AttackConfig, fgsm, pgd_linf
from .base import BaseModel, BaseTrainConfig, export_logits, logits, train_base
from .data import (Dataset, LogitDataset, corrupt_gaussian, load_logit_dataset, make_clusters,
                   make_ood, save_logit_dataset)
from .evaluation import (EvalReport, evaluate, evaluate_adversarial_sweep, evaluate_ood,
                         evaluate_severity_sweep, export_report)
from .head import Head, LossBreakdown, LossConfig, jsd_mi_bound, train_head
from .rejection import Decision, ThresholdTable, calibrate, decide

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "fgsm",
    "pgd_linf",
    "BaseModel",
    "BaseTrainConfig",
    "export_logits",
    "logits",
    "train_base",
    "Dataset",
    "LogitDataset",
    "corrupt_gaussian",
    "load_logit_dataset",
    "make_clusters",
    "make_ood",
    "save_logit_dataset",
    "EvalReport",
    "evaluate",
    "evaluate_adversarial_sweep",
    "evaluate_ood",
    "evaluate_severity_sweep",
    "export_report",
    "Head",
    "LossBreakdown",
    "LossConfig",
    "jsd_mi_bound",
    "train_head",
    "Decision",
    "ThresholdTable",
    "calibrate",
    "decide",
]
