"""Desk-scale simulator for communication-efficient federated LoRA
fine-tuning: Fisher-information curriculum data selection, noise-sensitivity
global-aggregation-layer selection with an eigengap lossless rule, and
momentum-Fisher sparse local updates."""

from .config import ExperimentConfig, parse_config
from .engine import run

__all__ = ["ExperimentConfig", "parse_config", "run"]
__version__ = "0.1.0"
