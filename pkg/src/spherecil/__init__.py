"""Hyperspherical class-incremental learning on embedding vectors.

Frozen per-class geodesic anchors, per-task experts trained with
interventional and compression regularizers, and entropic-transport
task routing with mixture-of-experts prediction — all as a plain numpy
numerical engine with deterministic seeding and binary artifacts.
"""

from .config import Config, load_config, parse_config_text
from .pipeline import (
    ContinualState,
    MetricsReport,
    TaskData,
    TaskStream,
    evaluate_metrics,
    infer,
    run_ablation,
    run_training,
    zero_shot_predict,
)
from .synthetic import gen_synthetic

__all__ = [
    "Config",
    "ContinualState",
    "MetricsReport",
    "TaskData",
    "TaskStream",
    "evaluate_metrics",
    "gen_synthetic",
    "infer",
    "load_config",
    "parse_config_text",
    "run_ablation",
    "run_training",
    "zero_shot_predict",
]

__version__ = "0.1.0"
