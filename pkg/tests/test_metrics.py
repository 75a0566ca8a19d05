import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psnf_control.experiments import RunConfig, run_closed_loop
from psnf_control.integrator import Trajectory, WindowError
from psnf_control.metrics import (
    RunReport,
    build_report,
    ise,
    itae,
    max_duty,
    settling_periods,
    steady_state_error_percent,
)

B_REF = 0.9


def _traj(fn, period=1.0, t_end=20.0, n=20001):
    times = np.linspace(0.0, t_end, n)
    b = np.asarray(fn(times), dtype=float)
    z = np.zeros(n)
    return Trajectory(times, b, z, z, period=period)


def _const(value, **kw):
    return _traj(lambda t: np.full_like(t, value), **kw)


def _step(level, t_step, **kw):
    """B at ``level`` before ``t_step`` and at the reference afterwards."""
    return _traj(lambda t: np.where(t < t_step, level, B_REF), **kw)


class TestSteadyState:
    def test_exact(self):
        assert steady_state_error_percent(_const(B_REF), B_REF, 20) == pytest.approx(0.0, abs=1e-9)

    def test_one_percent(self):
        assert steady_state_error_percent(_const(0.99 * B_REF), B_REF, 20) == pytest.approx(1.0, abs=1e-9)

    def test_too_short(self):
        with pytest.raises(WindowError):
            steady_state_error_percent(_const(B_REF, t_end=10.0, n=101), B_REF, 20)

    def test_needs_five_periods(self):
        with pytest.raises(ValueError):
            steady_state_error_percent(_const(B_REF), B_REF, 4)


class TestIntegralMetrics:
    def test_zero_error(self):
        tr = _const(B_REF)
        assert ise(tr, B_REF, 1.0, 20.0) == pytest.approx(0.0, abs=1e-18)
        assert itae(tr, B_REF, 1.0, 20.0) == pytest.approx(0.0, abs=1e-9)

    def test_constant_error(self):
        tr = _const(1.1 * B_REF)
        assert ise(tr, B_REF, 1.0, 20.0) == pytest.approx(0.19, abs=1e-9)
        assert itae(tr, B_REF, 1.0, 20.0) == pytest.approx(19.95, abs=1e-9)

    def test_sign_ignored(self):
        hi, lo = _const(1.1 * B_REF), _const(0.9 * B_REF)
        assert ise(hi, B_REF) == pytest.approx(ise(lo, B_REF), rel=1e-9)
        assert itae(hi, B_REF) == pytest.approx(itae(lo, B_REF), rel=1e-9)

    def test_late_error_weighs_more(self):
        early = _traj(lambda t: np.where((t >= 3) & (t < 5), 1.2 * B_REF, B_REF))
        late = _traj(lambda t: np.where((t >= 13) & (t < 15), 1.2 * B_REF, B_REF))
        assert itae(late, B_REF) > itae(early, B_REF)
        assert ise(late, B_REF) == pytest.approx(ise(early, B_REF), rel=1e-6)

    def test_span_checked(self):
        with pytest.raises(WindowError):
            ise(_const(B_REF, t_end=10.0, n=101), B_REF, 1.0, 20.0)

    def test_refinement(self):
        runs = [
            run_closed_loop(RunConfig(controller="openloop", period=2.0, n_periods=10, h=h))[1]
            for h in (0.005, 0.0025)
        ]
        assert abs(runs[0].ise - runs[1].ise) <= 1e-6 * runs[1].ise
        assert abs(runs[0].itae - runs[1].itae) <= 1e-6 * runs[1].itae


class TestSettling:
    def test_immediate(self):
        assert settling_periods(_const(1.05 * B_REF), B_REF) == 1

    def test_last_exit_ceiling(self):
        # after a step at 1.5P the moving average re-enters the band at 2.3P
        tr = _step(1.5 * B_REF, 1.5)
        assert settling_periods(tr, B_REF) == 3

    def test_exact_boundary(self):
        # re-entry at 2.8P rounds up to 3, re-entry just after 3P rounds to 4
        assert settling_periods(_step(1.5 * B_REF, 2.0), B_REF) == 3
        assert settling_periods(_step(1.5 * B_REF, 2.25), B_REF) == 4

    def test_not_settled(self):
        tr = _traj(lambda t: np.where(t < 19.5, B_REF, 2 * B_REF))
        assert settling_periods(tr, B_REF) is None

    def test_needs_a_period(self):
        tr = _const(B_REF, period=30.0)
        with pytest.raises(WindowError):
            settling_periods(tr, B_REF)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 0.5), st.floats(0.01, 0.5), st.floats(1.0, 10.0), st.floats(0.6, 1.6))
    def test_band_monotone(self, band_a, band_b, t_step, level):
        tr = _step(level * B_REF, t_step, n=4001)
        narrow, wide = sorted((band_a, band_b))
        ps_n = settling_periods(tr, B_REF, narrow)
        ps_w = settling_periods(tr, B_REF, wide)
        assert ps_w is not None
        if ps_n is not None:
            assert ps_w <= ps_n


class TestMaxDuty:
    def test_values(self):
        assert max_duty([0.31] * 5) == 0.31
        assert max_duty([0.3, 0.57, 0.31, 0.2]) == 0.57

    def test_empty(self):
        with pytest.raises(ValueError):
            max_duty([])


class TestReport:
    def _report(self):
        tr = _const(1.1 * B_REF)
        return build_report(tr, B_REF, 20, [0.3, 0.57] + [0.31] * 18, [0.0] * 20, seed=3)

    def test_fields(self):
        rep = self._report()
        assert rep.ise == pytest.approx(0.19) and rep.itae == pytest.approx(19.95)
        assert rep.e_r_percent == pytest.approx(10.0)
        assert rep.settling_periods is None
        assert rep.d_max == 0.57
        assert rep.final_state == (pytest.approx(0.99), 0.0)

    def test_summary_line(self):
        line = self._report().summary_line()
        assert line.startswith("e_r%=10 P_s=not-settled ISE=0.19 ITAE=19.95 Dmax=0.57")

    def test_json(self):
        data = json.loads(self._report().to_json())
        assert data["seed"] == 3
        assert data["settling_periods"] is None
        assert set(data) >= {"e_r_percent", "d_max", "ise", "itae", "duty_history", "final_state"}

    def test_duty_csv(self):
        rep = RunReport(1.0, 2, 0.5, 0.1, 0.2, [0.3, 0.5], [0.0, 0.01], (0.9, 1.0))
        assert rep.duty_csv() == "period_index,duty,error\n0,0.3,0.0\n1,0.5,0.01\n"
