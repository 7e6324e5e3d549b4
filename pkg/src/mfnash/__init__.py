"""Numerical epsilon-Nash certification for mean-field games whose players
control the size of their jumps."""

__version__ = "0.1.0"

from ._accel import backend  # noqa: E402
from .measure import EmpiricalMeasure, MeasureFlow, empirical, fit_rate, wasserstein2  # noqa: E402
from .models import MODELS, get_model  # noqa: E402
from .sde import ActionSpace, ModelSpec, TimeGrid, build_time_grid  # noqa: E402

__all__ = [
    "ActionSpace",
    "EmpiricalMeasure",
    "MODELS",
    "MeasureFlow",
    "ModelSpec",
    "TimeGrid",
    "backend",
    "build_time_grid",
    "empirical",
    "fit_rate",
    "get_model",
    "wasserstein2",
]
