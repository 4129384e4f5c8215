"""Spectral estimators for multi-index models: asymptotic theory, optimal preprocessing and simulation."""

from .errors import SpectralMIMError
from .expectation import build_zlaw, expect
from .model_core import (
    LinkModel,
    Preprocessing,
    SignalSpec,
    builtin_model,
    builtin_preprocessing,
    make_signals,
    reparametrize,
)
from .optimal_design import design, objective, t_star_mixed_pr, t_star_product, troiani_threshold
from .theory import fit_bulk, predict, recovery_threshold, solve_master

__version__ = "0.1.0"

__all__ = [
    "SpectralMIMError",
    "LinkModel",
    "Preprocessing",
    "SignalSpec",
    "builtin_model",
    "builtin_preprocessing",
    "make_signals",
    "reparametrize",
    "build_zlaw",
    "expect",
    "fit_bulk",
    "solve_master",
    "predict",
    "recovery_threshold",
    "design",
    "objective",
    "t_star_product",
    "t_star_mixed_pr",
    "troiani_threshold",
]
