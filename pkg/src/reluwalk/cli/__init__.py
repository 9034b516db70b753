"""Experiment orchestration: config parsing, checkpoint files, experiment
runners, and CSV/SVG report emission."""

from .config import ExperimentConfig, parse_arch, parse_config
from .checkpoint import load_checkpoint, save_checkpoint
from .experiments import run_experiment
from .reports import ExperimentReport, Row, Series, emit_report

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "Row",
    "Series",
    "parse_arch",
    "parse_config",
    "run_experiment",
    "save_checkpoint",
    "load_checkpoint",
    "emit_report",
]
