"""Duty-cycle control of plant-soil negative feedback by periodic toxin removal."""

from .averaging import (
    FeedforwardCurve,
    InfeasibleTarget,
    averaged_equilibrium,
    invert_feedforward,
    tabulate_feedforward_curve,
)
from .experiments import RunConfig, robustness_sweep, run_closed_loop, tune_pi_grid
from .integrator import IntegrationDiverged, Trajectory, integrate_segment
from .model import NOMINAL, PlantParams, PulseWave, State, equilibria, ideal_biomass

__version__ = "0.1.0"

__all__ = [
    "FeedforwardCurve",
    "InfeasibleTarget",
    "IntegrationDiverged",
    "NOMINAL",
    "PlantParams",
    "PulseWave",
    "RunConfig",
    "State",
    "Trajectory",
    "averaged_equilibrium",
    "equilibria",
    "ideal_biomass",
    "integrate_segment",
    "invert_feedforward",
    "robustness_sweep",
    "run_closed_loop",
    "tabulate_feedforward_curve",
    "tune_pi_grid",
]
