"""Configuration, orchestration and command line for reproducible runs."""

from .config import ConfigError, ExperimentConfig, parse_config
from .runner import RunReport, determinism_self_test, emit_csv, run

__all__ = ["ConfigError", "ExperimentConfig", "RunReport", "determinism_self_test",
           "emit_csv", "parse_config", "run"]
