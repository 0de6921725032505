"""Scenario configs, the time-stepping driver, run output and run comparison."""
from .compare import CompareReport, compare_runs
from .config import ConfigError, ScenarioConfig, parse_config, parse_config_text
from .driver import NonConvergenceError, RunArtifacts, SimulationError, run_simulation
from .io import load_run, write_convergence_log, write_head_csv, write_run
