"""Duty-cycle policies evaluated once per period.

Every controller is queried at the period boundaries ``t_i = iP`` with the
mean biomass over the period just finished and the plant state at the
boundary, and returns the duty-cycle for the next period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ga import GaConfig, GaResult, evolve, make_rng
from .integrator import DEFAULT_STEP, horizon_costs
from .model import NOMINAL, PlantParams, PulseWave


def clamp_duty(d: float) -> float:
    return min(1.0, max(0.0, d))


# ---------------------------------------------------------------- open loop


@dataclass
class OpenLoopController:
    duty: float

    name = "openloop"

    def __post_init__(self):
        if not 0.0 <= self.duty <= 1.0:
            raise ValueError(f"duty must be in [0, 1], got {self.duty}")

    @property
    def initial_duty(self) -> float:
        return self.duty

    def update(self, index: int, mean_biomass: float, state) -> float:
        return self.duty


def open_loop_policy(duty_const: float):
    """Constant duty for every period."""
    return OpenLoopController(duty_const)


# ----------------------------------------------------------------------- PI


@dataclass(frozen=True)
class PiConfig:
    kp: float = 0.1
    ki: float = 26.0
    d_ref: float = 0.0
    quantization_step: float = 0.01
    anti_windup: bool = True

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0:
            raise ValueError("PI gains must be non-negative")
        if not 0.0 <= self.quantization_step <= 0.1:
            raise ValueError("quantization_step must be in [0, 0.1]")


@dataclass
class PiState:
    error_sum: float = 0.0
    last_duty: float = 0.0


def pi_initial_state(cfg: PiConfig) -> PiState:
    return PiState(0.0, clamp_duty(cfg.d_ref))


def quantize(duty: float, step: float) -> float:
    if step <= 0:
        return duty
    return clamp_duty(round(duty / step) * step)


def pi_step(cfg: PiConfig, st: PiState, error: float) -> tuple[float, PiState]:
    """One PI/PWM update: ``D = d_ref + kp*e + ki*sum(e)``, clamped and quantized.

    With anti-windup the error is not accumulated while the previous output
    sits on a limit and the error would push it further past that limit.
    """
    if not math.isfinite(error):
        raise ValueError(f"error must be finite, got {error}")
    winding = (st.last_duty >= 1.0 and error > 0) or (st.last_duty <= 0.0 and error < 0)
    error_sum = st.error_sum if (cfg.anti_windup and winding) else st.error_sum + error
    duty = clamp_duty(cfg.d_ref + cfg.kp * error + cfg.ki * error_sum)
    duty = quantize(duty, cfg.quantization_step)
    return duty, PiState(error_sum, duty)


@dataclass
class PiController:
    cfg: PiConfig
    b_ref: float
    state: PiState = None

    name = "pi"

    def __post_init__(self):
        if self.state is None:
            self.state = pi_initial_state(self.cfg)

    @property
    def initial_duty(self) -> float:
        return self.state.last_duty

    def update(self, index: int, mean_biomass: float, state) -> float:
        duty, self.state = pi_step(self.cfg, self.state, self.b_ref - mean_biomass)
        return duty


# ---------------------------------------------------------------------- MPC


@dataclass(frozen=True)
class MpcConfig:
    b_ref: float
    wave: PulseWave
    horizon_periods: int = 5
    ga: GaConfig = field(default_factory=GaConfig)
    prediction_params: PlantParams = NOMINAL
    h: float = DEFAULT_STEP

    def __post_init__(self):
        if self.horizon_periods < 1:
            raise ValueError("horizon_periods must be >= 1")
        if not self.b_ref > 0:
            raise ValueError("b_ref must be positive")


def mpc_objective(cfg: MpcConfig, measured, scale: float = 1.0):
    """Batch cost of candidate duty sequences predicted from ``measured``."""

    def objective(genes: np.ndarray) -> np.ndarray:
        costs = horizon_costs(cfg.prediction_params, cfg.wave, measured, genes, cfg.b_ref, cfg.h)
        return costs * scale if scale != 1.0 else costs

    return objective


def mpc_solve(cfg: MpcConfig, measured, previous_duty: float, rng) -> GaResult:
    return evolve(cfg.ga, mpc_objective(cfg, measured), cfg.horizon_periods, previous_duty, rng)


def mpc_step(cfg: MpcConfig, measured, previous_duty: float, rng_seed) -> float:
    """Optimise the duty sequence over the horizon and return its first element."""
    result = mpc_solve(cfg, measured, previous_duty, rng_seed)
    genes = result.best.genes
    if genes.size == 0:
        raise RuntimeError("genetic algorithm returned no individual")
    return clamp_duty(float(genes[0]))


@dataclass
class MpcController:
    cfg: MpcConfig
    d_ref: float
    seed: int = 0
    stream: tuple[int, ...] = ()
    previous_duty: float = None
    last_result: GaResult = field(default=None, repr=False)

    name = "mpc"

    def __post_init__(self):
        if self.previous_duty is None:
            self.previous_duty = clamp_duty(self.d_ref)

    @property
    def initial_duty(self) -> float:
        return clamp_duty(self.d_ref)

    def update(self, index: int, mean_biomass: float, state) -> float:
        rng = make_rng(self.seed, *self.stream, index)
        self.last_result = mpc_solve(self.cfg, state, self.previous_duty, rng)
        duty = clamp_duty(float(self.last_result.best.genes[0]))
        self.previous_duty = duty
        return duty
