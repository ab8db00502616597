"""Configuration-driven experiments: pipeline, sweeps, emission and CLI."""

from .config import ConfigError, ExperimentConfig, load_config
from .emit import HEADER, emit_constellation, emit_csv, emit_plot, read_csv
from .pipeline import PipelineError, PipelineResult, run_pipeline, simulate
from .sweeper import SweepResult, SweepRow, sweep
