"""Inverse source problem for the radiative transfer equation."""

from .config import RunConfig
from .pipeline import RunReport, noise_sweep, run_pipeline

__all__ = ["RunConfig", "RunReport", "noise_sweep", "run_pipeline"]
