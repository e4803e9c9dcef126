"""Experiment harness: configs, multi-seed runs, CSV/SVG output and the CLI."""
from .config import ExperimentConfig, load_config
from .experiment import (
    RunResult,
    SummaryRow,
    fit_direct_ridge,
    run_experiment,
    run_ope_experiment,
    run_structural_experiment,
    structural_mse,
)
from .plots import emit_plots, render_svg

__all__ = [
    "ExperimentConfig",
    "load_config",
    "RunResult",
    "SummaryRow",
    "fit_direct_ridge",
    "run_experiment",
    "run_ope_experiment",
    "run_structural_experiment",
    "structural_mse",
    "emit_plots",
    "render_svg",
]
