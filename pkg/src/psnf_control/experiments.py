"""Closed-loop runs, PI gain tuning and Monte Carlo robustness sweeps.

Every run is an independent work unit identified by a key; random streams
are derived from ``(master seed, key)`` so results do not depend on how the
units are scheduled across worker processes.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .averaging import invert_feedforward
from .controllers import (
    MpcConfig,
    MpcController,
    OpenLoopController,
    PiConfig,
    PiController,
)
from .ga import GaConfig, make_rng
from .integrator import (
    DEFAULT_STEP,
    IntegrationDiverged,
    Trajectory,
    integrate_segment,
    period_mean_biomass,
)
from .metrics import RunReport, build_report
from .model import NOMINAL, PlantParams, PulseWave, equilibria

# one removal cycle per year
DEFAULT_PERIOD = 12.0
DEFAULT_GAMMA = 0.3
CONTROLLERS = ("openloop", "pi", "mpc")
CONTROLLER_IDS = {name: i for i, name in enumerate(CONTROLLERS)}
SATURATION_LOW = 0.005
SATURATION_HIGH = 0.995
KP_GRID = tuple(round(0.1 * i, 10) for i in range(21))
KI_GRID = tuple(float(i) for i in range(1, 31))
CV_LIST = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3)


def default_workers() -> int:
    env = os.environ.get("PSNF_WORKERS")
    if env:
        return max(1, int(env))
    return 1


@dataclass(frozen=True)
class RunConfig:
    params: PlantParams = NOMINAL
    # model the controller believes in (feedforward and MPC prediction); None = params
    model_params: PlantParams | None = None
    period: float = DEFAULT_PERIOD
    gamma: float = DEFAULT_GAMMA
    controller: str = "pi"
    b_ref: float = 0.9
    n_periods: int = 20
    # None = uncontrolled equilibrium of the simulated plant
    initial: tuple[float, float] | None = None
    h: float = DEFAULT_STEP
    seed: int = 0
    kp: float = 0.1
    ki: float = 26.0
    quantization: float = 0.01
    anti_windup: bool = True
    openloop_duty: float | None = None
    horizon: int = 5
    ga: GaConfig = field(default_factory=GaConfig)
    delta: float = 0.1

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}; choose from {CONTROLLERS}")
        if self.n_periods < 6:
            raise ValueError("n_periods must be >= 6")
        if not 0 < self.b_ref <= self.model.b_max:
            raise ValueError("b_ref must lie in (0, b_max] of the design model")
        if self.openloop_duty is not None and not 0 <= self.openloop_duty <= 1:
            raise ValueError("openloop_duty must be in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def model(self) -> PlantParams:
        return self.params if self.model_params is None else self.model_params

    @property
    def wave(self) -> PulseWave:
        return PulseWave(period=self.period, duty=0.0, gamma=self.gamma)

    def initial_state(self) -> tuple[float, float]:
        if self.initial is not None:
            return tuple(float(x) for x in self.initial)
        return tuple(equilibria(self.params).coexistence)

    def feedforward_duty(self) -> float:
        return invert_feedforward(self.model, self.gamma, self.b_ref / self.model.b_max).duty

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, PlantParams):
                v = v.to_dict()
            elif isinstance(v, GaConfig):
                v = v.to_dict()
            elif isinstance(v, tuple):
                v = list(v)
            out[k] = v
        return out


def make_controller(cfg: RunConfig, d_ref: float, stream: tuple[int, ...] = ()):
    if cfg.controller == "openloop":
        return OpenLoopController(d_ref if cfg.openloop_duty is None else cfg.openloop_duty)
    if cfg.controller == "pi":
        pi = PiConfig(cfg.kp, cfg.ki, d_ref, cfg.quantization, cfg.anti_windup)
        return PiController(pi, cfg.b_ref)
    mpc = MpcConfig(
        b_ref=cfg.b_ref,
        wave=cfg.wave,
        horizon_periods=cfg.horizon,
        ga=cfg.ga,
        prediction_params=cfg.model,
        h=cfg.h,
    )
    return MpcController(mpc, d_ref, seed=cfg.seed, stream=stream)


def run_closed_loop(cfg: RunConfig, stream: tuple[int, ...] = ()) -> tuple[Trajectory, RunReport]:
    """Simulate ``n_periods`` periods, re-planning the duty-cycle at each boundary.

    ``duty_history[i]`` is the duty applied over ``[iP, (i+1)P]`` and
    ``errors[i]`` the reference minus the biomass mean over that period.
    """
    P = cfg.period
    wave = cfg.wave
    d_ref = cfg.feedforward_duty()
    ctrl = make_controller(cfg, d_ref, stream)
    state = cfg.initial_state()
    duty = ctrl.initial_duty
    duties, errors, parts = [], [], []
    for i in range(cfg.n_periods):
        seg = integrate_segment(cfg.params, wave, duty, state, i * P, (i + 1) * P, cfg.h)
        parts.append(seg)
        state = seg.final_state
        mean = period_mean_biomass(seg, i * P, (i + 1) * P)
        duties.append(duty)
        errors.append(cfg.b_ref - mean)
        if i + 1 < cfg.n_periods:
            duty = ctrl.update(i + 1, mean, state)
    traj = Trajectory.concatenate(parts)
    report = build_report(
        traj, cfg.b_ref, cfg.n_periods, duties, errors, config=cfg.to_dict(), seed=cfg.seed
    )
    return traj, report


# ------------------------------------------------------------------ tuning


@dataclass(frozen=True)
class TuningRow:
    kp: float
    ki: float
    excluded: bool
    reason: str
    e_r_percent: float
    settling_periods: int | None
    d_max: float
    ise: float
    itae: float

    def csv(self) -> str:
        ps = "" if self.settling_periods is None else str(self.settling_periods)
        return (
            f"{self.kp!r},{self.ki!r},{int(self.excluded)},{self.reason},{self.e_r_percent!r},"
            f"{ps},{self.d_max!r},{self.ise!r},{self.itae!r}"
        )


TUNING_HEADER = "kp,ki,excluded,reason,e_r_percent,settling_periods,d_max,ise,itae"


def _tuning_unit(args) -> TuningRow:
    base, kp, ki, max_settle = args
    cfg = replace(base, controller="pi", kp=kp, ki=ki)
    nan = math.nan
    try:
        _, rep = run_closed_loop(cfg)
    except IntegrationDiverged as exc:
        return TuningRow(kp, ki, True, f"diverged:{exc.time:.6g}", nan, None, nan, nan, nan)
    d = np.asarray(rep.duty_history)
    reasons = []
    if np.any(d >= SATURATION_HIGH) or np.any(d <= SATURATION_LOW):
        reasons.append("saturated")
    if rep.settling_periods is None:
        reasons.append("not-settled")
    elif max_settle is not None and rep.settling_periods > max_settle:
        reasons.append("slow-settling")
    return TuningRow(
        kp, ki, bool(reasons), "+".join(reasons), rep.e_r_percent,
        rep.settling_periods, rep.d_max, rep.ise, rep.itae,
    )


def _map(fn, tasks, workers: int):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def tune_pi_grid(
    base: RunConfig,
    kp_grid=KP_GRID,
    ki_grid=KI_GRID,
    max_settle: int | None = 7,
    workers: int | None = None,
) -> list[TuningRow]:
    """One closed-loop PI run per gain pair, flagging saturated or slow pairs."""
    if not kp_grid or not ki_grid:
        raise ValueError("gain grids must be non-empty")
    tasks = [(base, float(kp), float(ki), max_settle) for kp in kp_grid for ki in ki_grid]
    return _map(_tuning_unit, tasks, workers or default_workers())


def tuning_csv(rows: list[TuningRow]) -> str:
    return "\n".join([TUNING_HEADER] + [r.csv() for r in rows]) + "\n"


# -------------------------------------------------------------- robustness


def perturb_params(
    nominal: PlantParams, cv: float, rng: np.random.Generator, max_redraws: int = 10_000
) -> tuple[PlantParams, int]:
    """Draw every parameter from Normal(nominal, cv * nominal).

    Draws with a non-positive value or with ``g <= d`` are rejected and the
    whole set is drawn again; the number of rejections is returned.
    """
    base = nominal.as_array()
    for redraws in range(max_redraws):
        x = rng.normal(base, cv * base)
        if np.all(x > 0) and x[0] > x[2]:
            return PlantParams(*(float(v) for v in x)), redraws
    raise RuntimeError("could not draw admissible parameters")


@dataclass(frozen=True)
class RobustnessRow:
    controller: str
    cv: float
    run: int
    seed: int
    e_r_percent: float
    settling_periods: int | None
    ise: float
    itae: float
    diverged: bool
    redraws: int = 0

    def csv(self) -> str:
        ps = "" if self.settling_periods is None else str(self.settling_periods)
        return (
            f"{self.controller},{self.cv!r},{self.run},{self.seed},{self.e_r_percent!r},"
            f"{ps},{self.ise!r},{self.itae!r},{int(self.diverged)}"
        )


ROBUSTNESS_HEADER = "controller,cv,run,seed,e_r_percent,settling_periods,ise,itae,diverged"


def draw_run_params(base: RunConfig, cv_index: int, cv: float, run: int) -> tuple[PlantParams, int]:
    rng = make_rng(base.seed, cv_index, run)
    return perturb_params(base.model, cv, rng)


def _robustness_unit(args) -> RobustnessRow:
    base, controller, cv_index, cv, run = args
    params, redraws = draw_run_params(base, cv_index, cv, run)
    cfg = replace(base, controller=controller, params=params, model_params=base.model)
    stream = (cv_index, run, CONTROLLER_IDS[controller])
    nan = math.nan
    try:
        _, rep = run_closed_loop(cfg, stream=stream)
    except IntegrationDiverged:
        return RobustnessRow(controller, cv, run, base.seed, nan, None, nan, nan, True, redraws)
    return RobustnessRow(
        controller, cv, run, base.seed, rep.e_r_percent, rep.settling_periods,
        rep.ise, rep.itae, False, redraws,
    )


def robustness_runs(
    base: RunConfig,
    cv_list=CV_LIST,
    n_runs: int = 50,
    controllers=CONTROLLERS,
    workers: int | None = None,
) -> list[RobustnessRow]:
    """Paired Monte Carlo runs: each (cv, run) plant is shared by all controllers.

    The controllers always design with ``base.model`` (nominal) parameters.
    """
    if not cv_list or n_runs < 1:
        raise ValueError("need at least one cv value and one run")
    if any(cv < 0 for cv in cv_list):
        raise ValueError("cv values must be non-negative")
    tasks = [
        (base, ctrl, ci, float(cv), r)
        for ci, cv in enumerate(cv_list)
        for r in range(n_runs)
        for ctrl in controllers
    ]
    rows = _map(_robustness_unit, tasks, workers or default_workers())
    order = {c: i for i, c in enumerate(controllers)}
    return sorted(rows, key=lambda r: (order[r.controller], cv_list.index(r.cv), r.run))


def aggregate(rows: list[RobustnessRow], n_periods: int) -> dict:
    """Mean and sample standard deviation per (controller, cv).

    Runs that never settle count as ``n_periods + 1`` settling periods;
    diverged runs are excluded and counted.
    """
    cells: dict[tuple[str, float], list[RobustnessRow]] = {}
    for r in rows:
        cells.setdefault((r.controller, r.cv), []).append(r)
    out = {}
    for (ctrl, cv), group in cells.items():
        ok = [r for r in group if not r.diverged]
        cell = {
            "n": len(group),
            "diverged": len(group) - len(ok),
            "not_settled": sum(r.settling_periods is None for r in ok),
            "redraws": sum(r.redraws for r in group),
        }
        metrics = {
            "e_r_percent": [r.e_r_percent for r in ok],
            "settling_periods": [
                n_periods + 1 if r.settling_periods is None else r.settling_periods for r in ok
            ],
            "ise": [r.ise for r in ok],
            "itae": [r.itae for r in ok],
        }
        for name, vals in metrics.items():
            arr = np.asarray(vals, dtype=float)
            cell[name] = {
                "mean": float(arr.mean()) if arr.size else math.nan,
                "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
            }
        out.setdefault(ctrl, {})[repr(cv)] = cell
    return out


def robustness_csv(rows: list[RobustnessRow]) -> str:
    return "\n".join([ROBUSTNESS_HEADER] + [r.csv() for r in rows]) + "\n"


def robustness_sweep(
    base: RunConfig,
    cv_list=CV_LIST,
    n_runs: int = 50,
    controllers=CONTROLLERS,
    workers: int | None = None,
) -> tuple[list[RobustnessRow], dict]:
    rows = robustness_runs(base, cv_list, n_runs, controllers, workers)
    return rows, aggregate(rows, base.n_periods)
