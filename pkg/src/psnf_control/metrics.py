"""Closed-loop performance metrics computed from a trajectory.

The error signal is the relative moving-average error
``e_MA(t) = (B_MA(t) - b_ref) / b_ref`` for ``t >= P``, where ``B_MA`` is
the moving average of the biomass over one period.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .integrator import Trajectory, WindowError, moving_average_series, period_mean_biomass


def _trapz(y: np.ndarray, x: np.ndarray) -> float:
    if y.shape[0] < 2:
        return 0.0
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def _check_span(traj: Trajectory, t_end: float) -> None:
    if traj.t_end < t_end - 1e-9 * max(1.0, t_end):
        raise WindowError(f"trajectory ends at {traj.t_end}, need {t_end}")


def steady_state_error_percent(traj: Trajectory, b_ref: float, n_periods: int) -> float:
    """Relative error of the biomass mean over the last five periods, in percent."""
    if n_periods < 5:
        raise ValueError("need at least five periods")
    P = traj.period
    _check_span(traj, n_periods * P)
    mean = period_mean_biomass(traj, (n_periods - 5) * P, n_periods * P)
    return abs(mean - b_ref) / b_ref * 100.0


def relative_ma_error(traj: Trajectory, b_ref: float, t0: float | None = None, tf: float | None = None):
    """Sample times and signed ``e_MA`` restricted to ``[t0, tf]``."""
    P = traj.period
    t0 = P if t0 is None else t0
    tf = traj.t_end if tf is None else tf
    _check_span(traj, tf)
    times, ma = moving_average_series(traj)
    eps = 1e-12 * max(1.0, tf)
    mask = (times >= t0 - eps) & (times <= tf + eps)
    return times[mask], (ma[mask] - b_ref) / b_ref


def settling_periods(traj: Trajectory, b_ref: float, band: float = 0.10) -> int | None:
    """Periods needed for the moving average to enter the band and stay there.

    Returns ``None`` when the final sample is still outside the band.
    """
    P = traj.period
    times, err = relative_ma_error(traj, b_ref)
    if times.size == 0:
        raise WindowError("trajectory shorter than one period")
    outside = np.flatnonzero(np.abs(err) > band)
    if outside.size == 0:
        settle_time = times[0]
    elif outside[-1] == times.size - 1:
        return None
    else:
        settle_time = times[outside[-1] + 1]
    return max(1, math.ceil(settle_time / P - 1e-9))


def max_duty(duty_history) -> float:
    d = np.asarray(duty_history, dtype=float)
    if d.size == 0:
        raise ValueError("empty duty history")
    return float(np.max(d))


def ise(traj: Trajectory, b_ref: float, t0: float | None = None, tf: float | None = None) -> float:
    times, err = relative_ma_error(traj, b_ref, t0, tf)
    return _trapz(err * err, times)


def itae(traj: Trajectory, b_ref: float, t0: float | None = None, tf: float | None = None) -> float:
    times, err = relative_ma_error(traj, b_ref, t0, tf)
    return _trapz(times * np.abs(err), times)


@dataclass
class RunReport:
    e_r_percent: float
    settling_periods: int | None
    d_max: float
    ise: float
    itae: float
    duty_history: list[float]
    errors: list[float]
    final_state: tuple[float, float]
    clamp_count: int = 0
    config: dict = field(default_factory=dict)
    seed: int | None = None

    def summary_line(self) -> str:
        ps = "not-settled" if self.settling_periods is None else str(self.settling_periods)
        return (
            f"e_r%={self.e_r_percent:.6g} P_s={ps} ISE={self.ise:.6g} "
            f"ITAE={self.itae:.6g} Dmax={self.d_max:.6g}"
        )

    def to_json(self) -> str:
        data = asdict(self)
        data["final_state"] = list(self.final_state)
        return json.dumps(data, indent=2, sort_keys=True, allow_nan=True)

    def duty_csv(self) -> str:
        lines = ["period_index,duty,error"]
        for i, (d, e) in enumerate(zip(self.duty_history, self.errors)):
            lines.append(f"{i},{d!r},{e!r}")
        return "\n".join(lines) + "\n"


def build_report(
    traj: Trajectory,
    b_ref: float,
    n_periods: int,
    duty_history,
    errors,
    **extra,
) -> RunReport:
    """Evaluate every metric for one closed-loop run.

    ``duty_history[i]`` is the duty applied over period ``i``; ``D_max`` is the
    largest of them.
    """
    P = traj.period
    duties = [float(d) for d in duty_history]
    return RunReport(
        e_r_percent=steady_state_error_percent(traj, b_ref, n_periods),
        settling_periods=settling_periods(traj, b_ref),
        d_max=max_duty(duties),
        ise=ise(traj, b_ref, P, n_periods * P),
        itae=itae(traj, b_ref, P, n_periods * P),
        duty_history=duties,
        errors=[float(e) for e in errors],
        final_state=tuple(float(x) for x in traj.final_state),
        clamp_count=traj.clamp_count,
        **extra,
    )
