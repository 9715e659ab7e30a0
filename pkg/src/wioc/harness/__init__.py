"""Experiment orchestration: config, pipelines, reports and the CLI."""
from .config import ExperimentConfig, load_config, parse_config
from .runner import compare_methods, run_experiment, run_fits, simulate

__all__ = ["ExperimentConfig", "load_config", "parse_config", "compare_methods", "run_experiment",
           "run_fits", "simulate"]
