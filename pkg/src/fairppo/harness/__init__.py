"""Experiment orchestration: runners, algorithms, train/evaluate/sweep, plots and the CLI."""

from .experiment import ExperimentConfig, RunRecord, evaluate, run, sweep, train

__all__ = ["ExperimentConfig", "RunRecord", "evaluate", "run", "sweep", "train"]
