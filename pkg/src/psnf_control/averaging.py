"""Period-averaged model and feedforward duty-cycle design.

All quantities here are dimensionless (``B / b_max``, ``k T / (c d b_max)``)
and ``gamma`` is the removal amplitude per unit of dimensionless time, so
``eta = gamma * D / kappa`` is the removal strength relative to natural
toxin decay.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import PlantParams, dimensionless_equilibrium


class InfeasibleTarget(ValueError):
    """Target biomass cannot be produced by any admissible duty-cycle."""


class AveragedState(NamedTuple):
    b_av: float
    t_av: float


class Feedforward(NamedTuple):
    duty: float
    eta: float
    saturated: bool


def averaged_vector_field(
    params: PlantParams, gamma: float, duty: float, state, epsilon: float = 1.0
) -> tuple[float, float]:
    """Averaged dynamics in slow time ``tau``; ``epsilon`` is the period."""
    a, b, k = params.alpha, params.beta, params.kappa
    x, y = state
    dx = epsilon * (x * (1.0 - x) - a * x - a * b * x * y)
    dy = epsilon * (k * x + b * k * x * y - k * y - gamma * duty * y)
    return dx, dy


def _equilibrium_from_eta(params: PlantParams, eta: float) -> float:
    a, b = params.alpha, params.beta
    root = math.sqrt((b - 1.0 - eta) ** 2 + 4.0 * a * b * (1.0 + eta))
    return (b + 1.0 + eta - root) / (2.0 * b)


def averaged_equilibrium(params: PlantParams, gamma: float, duty: float) -> float:
    """Positive equilibrium of the averaged biomass for a given duty-cycle."""
    return _equilibrium_from_eta(params, gamma * duty / params.kappa)


def averaged_equilibrium_state(params: PlantParams, gamma: float, duty: float) -> AveragedState:
    x = averaged_equilibrium(params, gamma, duty)
    # biomass equation at rest: 1 - x - alpha - alpha*beta*y = 0
    y = (1.0 - x - params.alpha) / (params.alpha * params.beta)
    return AveragedState(x, y)


def approx_equilibrium(params: PlantParams, gamma: float, duty: float) -> tuple[float, bool]:
    """Small-alpha approximation ``(1 + eta) / beta``.

    The flag is False when ``eta >= beta - 1``; on that branch the
    alpha -> 0 limit of the exact expression is 1, not ``(1 + eta) / beta``.
    """
    b = params.beta
    eta = gamma * duty / params.kappa
    return (1.0 + eta) / b, bool(b > 1.0 and eta < b - 1.0)


def invert_feedforward(params: PlantParams, gamma: float, b_ref: float) -> Feedforward:
    """Duty-cycle whose averaged equilibrium equals ``b_ref`` (dimensionless).

    Squaring the equilibrium expression leaves an equation linear in ``eta``.
    The root is accepted only if it satisfies the sign condition of the
    unsquared equation; otherwise ``eta`` is found by bisection.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    a, b = params.alpha, params.beta
    b_free, _ = dimensionless_equilibrium(params)
    ceiling = 1.0 - a
    if b_ref < b_free - 1e-12:
        raise InfeasibleTarget(
            f"target {b_ref} is below the uncontrolled equilibrium {b_free:.6f}"
        )
    if b_ref >= ceiling:
        raise InfeasibleTarget(
            f"target {b_ref} is not below the full-removal limit {ceiling:.6f}"
        )
    lin = b + 1.0 - 2.0 * b * b_ref
    num = (b - 1.0) ** 2 + 4.0 * a * b - lin * lin
    den = 2.0 * lin + 2.0 * (b - 1.0) - 4.0 * a * b
    eta = num / den if den > 0 else math.nan
    if not (math.isfinite(eta) and lin + eta >= 0.0):
        eta = _bisect_eta(params, b_ref)
    eta = max(eta, 0.0)
    duty = params.kappa * eta / gamma
    if duty > 1.0:
        return Feedforward(1.0, eta, True)
    return Feedforward(duty, eta, False)


def _bisect_eta(params: PlantParams, b_ref: float, hi: float = 1e3) -> float:
    lo = 0.0
    if _equilibrium_from_eta(params, hi) < b_ref:
        raise InfeasibleTarget(f"target {b_ref} not reached for eta <= {hi}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _equilibrium_from_eta(params, mid) < b_ref:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class FeedforwardCurve:
    duties: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.values) < 0):
            raise ValueError("feedforward curve must be non-decreasing")

    def __call__(self, duty):
        return np.interp(duty, self.duties, self.values)

    def lookup(self, b_ref: float) -> float:
        """Duty-cycle for ``b_ref`` by inverse linear interpolation."""
        if b_ref < self.values[0] or b_ref > self.values[-1]:
            raise InfeasibleTarget(
                f"target {b_ref} outside tabulated range "
                f"[{self.values[0]:.6f}, {self.values[-1]:.6f}]"
            )
        return float(np.interp(b_ref, self.values, self.duties))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("D,B_av_star\n")
        for d, v in zip(self.duties.tolist(), self.values.tolist()):
            buf.write(f"{d!r},{v!r}\n")
        return buf.getvalue()


def tabulate_feedforward_curve(params: PlantParams, gamma: float, n_points: int = 101) -> FeedforwardCurve:
    if n_points < 2:
        raise ValueError("need at least two points")
    duties = np.linspace(0.0, 1.0, n_points)
    values = np.array([averaged_equilibrium(params, gamma, d) for d in duties])
    return FeedforwardCurve(duties, values)


def open_loop_condition(params: PlantParams, delta: float) -> float:
    """Lower bound on the dimensional removal product (rate * D) [1/month].

    An open-loop pulse design keeps the biomass within ``delta`` of the
    ideal biomass when the product exceeds this bound; a negative bound
    means any non-negative removal is admissible.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    p = params
    return -delta * p.c * p.s * p.b_max - p.k + p.c * p.s * p.b_max**2 * (p.g - p.d) / p.g
