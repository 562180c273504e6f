"""Configuration, scenarios and the command line for the acceptance studies."""
from .config import ConfigError, ExperimentConfig
from .scenarios import SCENARIOS, OutputConflict, ScenarioFailure, run_scenario

__all__ = ["ConfigError", "ExperimentConfig", "OutputConflict", "SCENARIOS", "ScenarioFailure", "run_scenario"]
