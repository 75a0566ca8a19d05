"""Fixed-step RK4 integration of the pulse-forced plant.

Steps never straddle a switching instant of the pulse wave, so the input is
constant inside every step. Trajectory integrals use the trapezoidal rule on
the stored samples (i.e. the exact integral of the piecewise-linear
interpolant).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .model import PlantParams, PulseWave, State

DEFAULT_STEP = 0.005
NEGATIVE_TOLERANCE = 1e-12

_OK = 0
_NONFINITE = 1
_NEGATIVE = 2


class IntegrationDiverged(ArithmeticError):
    """Raised when the state becomes non-finite or clearly negative."""

    def __init__(self, time: float, reason: str = "non-finite state"):
        super().__init__(f"integration diverged at t={time:.6g} months ({reason})")
        self.time = time


class WindowError(ValueError):
    """Requested window is not covered by the trajectory."""


# p = [g, b_max, d, s, c, k]
@njit(cache=True, inline="always")
def _rhs(p, b, t, rate):
    db = p[0] * b * (1.0 - b / p[1]) - p[2] * b - p[3] * b * t
    dt = p[4] * (p[2] * b + p[3] * b * t) - p[5] * t - rate * t
    return db, dt


@njit(cache=True, inline="always")
def _rk4(p, b, t, rate, hh):
    k1b, k1t = _rhs(p, b, t, rate)
    k2b, k2t = _rhs(p, b + 0.5 * hh * k1b, t + 0.5 * hh * k1t, rate)
    k3b, k3t = _rhs(p, b + 0.5 * hh * k2b, t + 0.5 * hh * k2t, rate)
    k4b, k4t = _rhs(p, b + hh * k3b, t + hh * k3t, rate)
    b_new = b + hh / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
    t_new = t + hh / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t)
    return b_new, t_new


@njit(cache=True, inline="always")
def _guard(x):
    # returns (value, status, clamped)
    if not math.isfinite(x):
        return x, _NONFINITE, 0
    if x < 0.0:
        if x >= -NEGATIVE_TOLERANCE:
            return 0.0, _OK, 1
        return x, _NEGATIVE, 0
    return x, _OK, 0


@njit(cache=True)
def _piece_steps(t_start, t_end, h):
    n = int(math.floor((t_end - t_start) / h))
    # drop a remainder that is only roundoff
    if t_end - (t_start + n * h) <= 1e-9 * h:
        return max(n, 1), False
    return n + 1, True


@njit(cache=True)
def _integrate_pieces(p, b, t, bounds, rates, h, times, bs, ts, us):
    """Integrate over consecutive pieces, storing every sample.

    Returns (n_samples, status, fail_time, clamps).
    """
    idx = 0
    times[0] = bounds[0]
    bs[0] = b
    ts[0] = t
    clamps = 0
    for j in range(rates.shape[0]):
        t_start = bounds[j]
        t_end = bounds[j + 1]
        rate = rates[j]
        n, _ = _piece_steps(t_start, t_end, h)
        for m in range(1, n + 1):
            if m == n:
                t_next = t_end
            else:
                t_next = t_start + m * h
            hh = t_next - times[idx]
            us[idx] = rate * t
            b, t = _rk4(p, b, t, rate, hh)
            b, sb, cb = _guard(b)
            t, st, ct = _guard(t)
            clamps += cb + ct
            idx += 1
            times[idx] = t_next
            bs[idx] = b
            ts[idx] = t
            status = max(sb, st)
            if status != _OK:
                return idx + 1, status, t_next, clamps
    us[idx] = rates[rates.shape[0] - 1] * t
    return idx + 1, _OK, bounds[-1], clamps


@njit(cache=True)
def _period_means(p, b, t, period, rate, duties, h):
    """Simulate consecutive periods; return per-period biomass means and the final state.

    status codes as in _integrate_pieces; on failure the remaining means are NaN.
    """
    n_per = duties.shape[0]
    means = np.full(n_per, np.nan)
    status = _OK
    for i in range(n_per):
        d = duties[i]
        acc = 0.0
        t0 = i * period
        t_sw = t0 + d * period
        t1 = (i + 1) * period
        for piece in range(2):
            if piece == 0:
                a, z, r = t0, t_sw, rate
            else:
                a, z, r = t_sw, t1, 0.0
            if z - a <= 0.0:
                continue
            n, _ = _piece_steps(a, z, h)
            t_prev = a
            for m in range(1, n + 1):
                t_next = z if m == n else a + m * h
                hh = t_next - t_prev
                b_old = b
                b, t = _rk4(p, b, t, r, hh)
                b, sb, _ = _guard(b)
                t, st, _ = _guard(t)
                status = max(sb, st)
                if status != _OK:
                    return means, b, t, status
                acc += 0.5 * (b_old + b) * hh
                t_prev = t_next
        means[i] = acc / period
    return means, b, t, status


@njit(cache=True)
def _population_costs(p, b0, t0, period, rate, genes, h, b_ref):
    """Sum over the horizon of |period mean - b_ref| / b_ref for every candidate."""
    n_ind = genes.shape[0]
    costs = np.empty(n_ind)
    for i in range(n_ind):
        means, _, _, status = _period_means(p, b0, t0, period, rate, genes[i], h)
        if status != _OK:
            costs[i] = np.inf
            continue
        acc = 0.0
        for j in range(means.shape[0]):
            acc += abs(means[j] - b_ref) / b_ref
        costs[i] = acc
    return costs


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    b: np.ndarray
    t: np.ndarray
    u: np.ndarray
    period: float
    clamp_count: int = 0
    _cum: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("times", "b", "t", "u"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (self.b[1:] + self.b[:-1]) * np.diff(self.times))))
        cum.setflags(write=False)
        object.__setattr__(self, "_cum", cum)

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def final_state(self) -> State:
        return State(float(self.b[-1]), float(self.t[-1]))

    def __len__(self):
        return self.times.shape[0]

    @classmethod
    def concatenate(cls, parts: list["Trajectory"]) -> "Trajectory":
        """Join consecutive segments, dropping each duplicated boundary sample."""
        if not parts:
            raise ValueError("nothing to concatenate")
        times, bs, ts = [parts[0].times], [parts[0].b], [parts[0].t]
        # the input at a shared boundary is the one applied by the following segment
        us = [seg.u[:-1] for seg in parts[:-1]] + [parts[-1].u]
        for prev, seg in zip(parts, parts[1:]):
            if seg.times[0] != prev.times[-1]:
                raise ValueError("segments are not contiguous")
            times.append(seg.times[1:])
            bs.append(seg.b[1:])
            ts.append(seg.t[1:])
        return cls(
            np.concatenate(times),
            np.concatenate(bs),
            np.concatenate(ts),
            np.concatenate(us),
            period=parts[0].period,
            clamp_count=sum(s.clamp_count for s in parts),
        )

    def integral(self, a, b):
        """Integral of B over [a, b] (arrays broadcast)."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        tol = 1e-9 * max(1.0, abs(self.t_end))
        if np.any(a < self.t_start - tol) or np.any(b > self.t_end + tol) or np.any(b < a):
            raise WindowError(
                f"window outside trajectory span [{self.t_start}, {self.t_end}]"
            )
        return self._cumulative_at(np.clip(b, self.t_start, self.t_end)) - self._cumulative_at(
            np.clip(a, self.t_start, self.t_end)
        )

    def _cumulative_at(self, x):
        times, vals = self.times, self.b
        k = np.clip(np.searchsorted(times, x, side="right") - 1, 0, len(times) - 2)
        dt = x - times[k]
        slope = (vals[k + 1] - vals[k]) / (times[k + 1] - times[k])
        bx = vals[k] + slope * dt
        return self._cum[k] + 0.5 * (vals[k] + bx) * dt

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("time,B,T,u\n")
        for row in zip(self.times.tolist(), self.b.tolist(), self.t.tolist(), self.u.tolist()):
            buf.write(",".join(repr(v) for v in row))
            buf.write("\n")
        return buf.getvalue()


def switching_instants(wave: PulseWave, duty: float, t0: float, t1: float) -> list[float]:
    """Switch times of the pulse strictly inside (t0, t1)."""
    P = wave.period
    if duty <= 0.0 or duty >= 1.0:
        return []
    tol = 1e-12 * P
    out = []
    m = math.floor(t0 / P)
    while m * P < t1:
        for s in (m * P, m * P + duty * P):
            if t0 + tol < s < t1 - tol:
                out.append(s)
        m += 1
    return sorted(set(out))


def integrate_segment(
    params: PlantParams,
    wave: PulseWave,
    duty: float | None,
    start,
    t0: float,
    t1: float,
    h: float = DEFAULT_STEP,
) -> Trajectory:
    """Integrate the plant from ``start`` at ``t0`` to ``t1`` with duty ``duty``.

    ``duty`` overrides ``wave.duty`` for this segment (``None`` keeps it).
    """
    if not t1 > t0:
        raise ValueError(f"need t0 < t1, got {t0}, {t1}")
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    duty = wave.duty if duty is None else min(1.0, max(0.0, float(duty)))
    b, t = float(start[0]), float(start[1])
    if b < 0 or t < 0:
        raise ValueError("initial state must be non-negative")

    bounds = np.array([t0, *switching_instants(wave, duty, t0, t1), t1])
    rate = wave.removal_rate(params)
    mids = 0.5 * (bounds[:-1] + bounds[1:])
    on = np.fmod(mids, wave.period) < duty * wave.period
    rates = np.where(on, rate, 0.0)

    capacity = sum(_piece_steps(float(a), float(z), h)[0] for a, z in zip(bounds[:-1], bounds[1:])) + 1
    times = np.empty(capacity)
    bs = np.empty(capacity)
    ts = np.empty(capacity)
    us = np.empty(capacity)
    n, status, fail_time, clamps = _integrate_pieces(
        params.as_array(), b, t, bounds, rates, h, times, bs, ts, us
    )
    if status == _NONFINITE:
        raise IntegrationDiverged(fail_time)
    if status == _NEGATIVE:
        raise IntegrationDiverged(fail_time, "negative state")
    return Trajectory(times[:n], bs[:n], ts[:n], us[:n], period=wave.period, clamp_count=clamps)


def simulate_period_means(
    params: PlantParams,
    wave: PulseWave,
    duties,
    start,
    h: float = DEFAULT_STEP,
) -> tuple[np.ndarray, State]:
    """Per-period mean biomass for a duty sequence, without storing samples."""
    means, b, t, status = _period_means(
        params.as_array(),
        float(start[0]),
        float(start[1]),
        wave.period,
        wave.removal_rate(params),
        np.asarray(duties, dtype=float),
        h,
    )
    if status != _OK:
        raise IntegrationDiverged(float("nan"))
    return means, State(b, t)


def horizon_costs(
    params: PlantParams,
    wave: PulseWave,
    start,
    genes: np.ndarray,
    b_ref: float,
    h: float = DEFAULT_STEP,
) -> np.ndarray:
    """Receding-horizon cost of each row of ``genes`` (one duty per period)."""
    genes = np.ascontiguousarray(genes, dtype=float)
    if genes.ndim == 1:
        genes = genes[None, :]
    return _population_costs(
        params.as_array(),
        float(start[0]),
        float(start[1]),
        wave.period,
        wave.removal_rate(params),
        genes,
        h,
        float(b_ref),
    )


def period_mean_biomass(traj: Trajectory, window_start: float, window_end: float) -> float:
    """Mean of B over ``[window_start, window_end]``."""
    if not window_end > window_start:
        raise WindowError("window must have positive length")
    return float(traj.integral(window_start, window_end)) / (window_end - window_start)


def moving_average(traj: Trajectory, time: float) -> float:
    """Moving average of B with width one period, defined for ``time >= period``."""
    P = traj.period
    if time < traj.t_start + P - 1e-12 * P:
        raise WindowError(f"moving average undefined before t = P = {P}")
    return period_mean_biomass(traj, time - P, time)


def moving_average_series(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Moving average of B at every sample time ``t >= P``."""
    P = traj.period
    mask = traj.times >= traj.t_start + P - 1e-12 * P
    times = traj.times[mask]
    return times, traj.integral(times - P, times) / P
