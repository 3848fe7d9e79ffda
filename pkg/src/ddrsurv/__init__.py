"""Doubly robust estimation of treatment effects on left-truncated right-censored survival times."""

from .data import Dataset, SubjectRecord, load_csv, write_csv, split_k
from .simulation import SimConfig, generate, generate_variant
from .estimators import ESTIMATORS, run_estimator, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "SubjectRecord",
    "load_csv",
    "write_csv",
    "split_k",
    "SimConfig",
    "generate",
    "generate_variant",
    "ESTIMATORS",
    "run_estimator",
    "run_pipeline",
]
