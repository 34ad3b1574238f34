"""Frequency-domain Helmholtz modelling with convergent Born series, and
wavefield reconstruction inversion driven by it."""

__version__ = "0.1.0"

from .cbs import CbsConfig, CbsDivergenceError, CbsSolveReport, HelmholtzOperator, solve_helmholtz
from .continuation import FrequencySchedule, SolveBudget, expand_schedule, predict_budget, run_inversion
from .grid import (AcquisitionGeometry, ComplexWavefield, DataMatrix, Grid2D, ObservationOperator,
                   SquaredSlownessModel)
from .sketching import SketchConfig, SketchOperator, make_sketch
from .wri import WriConfig, WriProblem, WriState, init_state, wri_iterate

__all__ = [
    "AcquisitionGeometry", "CbsConfig", "CbsDivergenceError", "CbsSolveReport", "ComplexWavefield",
    "DataMatrix", "FrequencySchedule", "Grid2D", "HelmholtzOperator", "ObservationOperator",
    "SketchConfig", "SketchOperator", "SolveBudget", "SquaredSlownessModel", "WriConfig", "WriProblem",
    "WriState", "expand_schedule", "init_state", "make_sketch", "predict_budget", "run_inversion",
    "solve_helmholtz", "wri_iterate",
]
