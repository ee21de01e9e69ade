"""Experiment configuration, Monte-Carlo runner and command line."""

from .config import ExperimentConfig, build_config, load_config, parse_lines
from .runner import (
    AggregateResult,
    ExperimentFailure,
    OutputError,
    aggregate,
    emit_csv,
    replicate_seeds,
    run_experiment,
)
