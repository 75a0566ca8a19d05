"""Biomass/toxin plant model, pulse-wave input and equilibria.

State variables are surface densities in kg/cm^2 and time is in months.
The toxin removal input is a pulse wave of period ``P`` and duty-cycle
``D``; while the pulse is high the toxin is removed at a rate proportional
to its density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class InvalidParameters(ValueError):
    """Raised when plant or input parameters violate their invariants."""


@dataclass(frozen=True)
class PlantParams:
    g: float = 0.5        # growth rate [1/month]
    b_max: float = 1.0    # carrying capacity [kg/cm^2]
    d: float = 0.015      # death rate [1/month]
    s: float = 0.15       # toxin sensitivity [cm^2/(kg month)]
    c: float = 0.5        # toxin production rate [-]
    k: float = 0.05       # toxin decay rate [1/month]

    def __post_init__(self):
        for name in ("g", "b_max", "d", "s", "c", "k"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameters(f"{name} must be finite and > 0, got {value!r}")
        if self.g <= self.d:
            raise InvalidParameters(
                f"growth rate g={self.g} must exceed death rate d={self.d}"
            )

    @property
    def alpha(self) -> float:
        return self.d / self.g

    @property
    def beta(self) -> float:
        return self.c * self.s * self.b_max / self.k

    @property
    def kappa(self) -> float:
        return self.k / self.g

    @property
    def discriminant(self) -> float:
        """sqrt((beta - 1)^2 + 4 alpha beta)."""
        a, b = self.alpha, self.beta
        return math.sqrt((b - 1.0) ** 2 + 4.0 * a * b)

    @property
    def toxin_scale(self) -> float:
        """Dimensional toxin density corresponding to one dimensionless unit."""
        return self.c * self.d * self.b_max / self.k

    def as_array(self) -> np.ndarray:
        return np.array([self.g, self.b_max, self.d, self.s, self.c, self.k])

    def to_dict(self) -> dict:
        return {n: getattr(self, n) for n in ("g", "b_max", "d", "s", "c", "k")}


NOMINAL = PlantParams()


@dataclass(frozen=True)
class PulseWave:
    """Rectangular removal input.

    ``gamma`` is the removal amplitude expressed per unit of dimensionless
    time ``g*t`` (the form in which it enters the averaged model), so the
    removal rate applied to the toxin while the pulse is high is
    ``g * gamma`` per month. The duty-cycle is clamped to [0, 1]. The
    on-phase comes first in each period: ``[mP, mP + D*P)``.
    """

    period: float = 12.0
    duty: float = 0.0
    gamma: float = 0.3

    def __post_init__(self):
        if not (math.isfinite(self.period) and self.period > 0):
            raise InvalidParameters(f"period must be > 0, got {self.period!r}")
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            raise InvalidParameters(f"gamma must be >= 0, got {self.gamma!r}")
        if not math.isfinite(self.duty):
            raise InvalidParameters(f"duty must be finite, got {self.duty!r}")
        object.__setattr__(self, "duty", min(1.0, max(0.0, float(self.duty))))

    def removal_rate(self, params: PlantParams) -> float:
        """Dimensional removal rate [1/month] applied during the on-phase."""
        return params.g * self.gamma


class State(NamedTuple):
    b: float
    t: float


def pulse_value(wave: PulseWave, time: float) -> int:
    """Return 1 while the removal pulse is high at ``time``, else 0."""
    if wave.duty <= 0.0:
        return 0
    if wave.duty >= 1.0:
        return 1
    return int(math.fmod(time, wave.period) < wave.duty * wave.period)


def vector_field(params: PlantParams, state, u: float = 0.0) -> tuple[float, float]:
    """Right-hand side of the controlled plant.

    ``u`` is the toxin removal flux (rate times toxin density).
    """
    b, t = state
    p = params
    db = p.g * b * (1.0 - b / p.b_max) - p.d * b - p.s * b * t
    dt = p.c * (p.d * b + p.s * b * t) - p.k * t - u
    return db, dt


def jacobian(params: PlantParams, state) -> np.ndarray:
    """Jacobian of the uncontrolled vector field."""
    b, t = state
    p = params
    return np.array(
        [
            [p.g - 2.0 * p.g * b / p.b_max - p.d - p.s * t, -p.s * b],
            [p.c * (p.d + p.s * t), p.c * p.s * b - p.k],
        ]
    )


class Equilibria(NamedTuple):
    origin: State
    coexistence: State


def dimensionless_equilibrium(params: PlantParams) -> tuple[float, float]:
    a, b, gam = params.alpha, params.beta, params.discriminant
    b_star = (1.0 + b - gam) / (2.0 * b)
    t_star = (b - 1.0 - 2.0 * a * b + gam) / (2.0 * a * b * b)
    return b_star, t_star


def equilibria(params: PlantParams) -> Equilibria:
    """Origin and the stable coexistence point in dimensional units."""
    b_star, t_star = dimensionless_equilibrium(params)
    return Equilibria(
        origin=State(0.0, 0.0),
        coexistence=dimensionalize(params, (b_star, t_star)),
    )


def ideal_biomass(params: PlantParams) -> float:
    """Biomass reached if the toxin could be removed completely."""
    return params.b_max / params.g * (params.g - params.d)


def nondimensionalize(params: PlantParams, state) -> tuple[float, float]:
    b, t = state
    return b / params.b_max, t / params.toxin_scale


def dimensionalize(params: PlantParams, state) -> State:
    b, t = state
    return State(b * params.b_max, t * params.toxin_scale)


def nondimensional_time(params: PlantParams, time: float) -> float:
    return params.g * time
