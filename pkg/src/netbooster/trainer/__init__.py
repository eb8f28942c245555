"""Datasets, training loops, checkpoints and the end-to-end pipeline."""

from .data import Dataset, load_idx, make_blobs, normalize, read_idx, synthetic_splits, write_idx
from .pipeline import PhaseError, PipelineConfigs, PipelineReport, PLTSettings, run_pipeline
from .train import TrainConfig, evaluate, train

__all__ = [
    "Dataset",
    "PLTSettings",
    "PhaseError",
    "PipelineConfigs",
    "PipelineReport",
    "TrainConfig",
    "evaluate",
    "load_idx",
    "make_blobs",
    "normalize",
    "read_idx",
    "run_pipeline",
    "synthetic_splits",
    "train",
    "write_idx",
]
