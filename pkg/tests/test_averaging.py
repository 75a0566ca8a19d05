import numpy as np
import pytest
from hypothesis import given, strategies as st

from psnf_control.averaging import (
    InfeasibleTarget,
    approx_equilibrium,
    averaged_equilibrium,
    averaged_equilibrium_state,
    averaged_vector_field,
    invert_feedforward,
    open_loop_condition,
    tabulate_feedforward_curve,
)
from psnf_control.model import NOMINAL, PlantParams, dimensionless_equilibrium

# eta = 13/14 solves the squared equilibrium relation at y = 0.9 for alpha = 0.03,
# beta = 1.5; D = kappa * eta / gamma = 13/42
D_REF_EXACT = 13.0 / 42.0


def test_feedforward_example():
    ff = invert_feedforward(NOMINAL, 0.3, 0.9)
    assert ff.duty == pytest.approx(0.309524, abs=1e-6)
    assert ff.duty == pytest.approx(D_REF_EXACT, abs=1e-12)
    assert ff.eta == pytest.approx(13.0 / 14.0, abs=1e-12)
    assert not ff.saturated
    assert abs(ff.duty - 0.31) <= 0.01


def test_no_removal_is_free_equilibrium():
    b_free, _ = dimensionless_equilibrium(NOMINAL)
    assert averaged_equilibrium(NOMINAL, 0.3, 0.0) == pytest.approx(b_free, abs=1e-15)
    assert invert_feedforward(NOMINAL, 0.3, b_free).duty == pytest.approx(0.0, abs=1e-12)


def test_equilibrium_state_is_rest_point():
    x, y = averaged_equilibrium_state(NOMINAL, 0.3, 0.4)
    dx, dy = averaged_vector_field(NOMINAL, 0.3, 0.4, (x, y))
    assert abs(dx) <= 1e-14 and abs(dy) <= 1e-14


def test_epsilon_scales_field():
    f1 = averaged_vector_field(NOMINAL, 0.3, 0.4, (0.5, 2.0), epsilon=1.0)
    f2 = averaged_vector_field(NOMINAL, 0.3, 0.4, (0.5, 2.0), epsilon=2.0)
    assert f2 == pytest.approx(tuple(2 * v for v in f1))


@given(st.floats(0.0, 1.0), st.floats(0.05, 2.0))
def test_inversion_round_trip_from_duty(duty, gamma):
    target = averaged_equilibrium(NOMINAL, gamma, duty)
    ff = invert_feedforward(NOMINAL, gamma, target)
    assert averaged_equilibrium(NOMINAL, gamma, ff.duty) == pytest.approx(target, abs=1e-9)


@given(st.floats(0.615, 0.969))
def test_inversion_round_trip_from_target(target):
    ff = invert_feedforward(NOMINAL, 10.0, target)
    assert not ff.saturated
    assert averaged_equilibrium(NOMINAL, 10.0, ff.duty) == pytest.approx(target, abs=1e-9)


@given(
    st.floats(0.001, 0.2), st.floats(1.05, 4.0), st.floats(0.05, 0.3),
)
def test_inversion_round_trip_other_parameters(d, c_scale, frac):
    # vary beta through c and alpha through d; target placed inside the feasible range
    p = PlantParams(d=d, c=0.5 * c_scale)
    lo, _ = dimensionless_equilibrium(p)
    hi = 1.0 - p.alpha
    target = lo + frac * (hi - lo)
    ff = invert_feedforward(p, 1e3, target)
    assert averaged_equilibrium(p, 1e3, ff.duty) == pytest.approx(target, abs=1e-9)


def test_monotone_in_duty():
    values = [averaged_equilibrium(NOMINAL, 0.3, d) for d in np.linspace(0, 1, 201)]
    assert np.all(np.diff(values) > 0)


def test_large_removal_limit():
    # the averaged equilibrium approaches 1 - alpha, the point where toxin vanishes
    x = averaged_equilibrium(NOMINAL, 1e7, 1.0)
    assert x == pytest.approx(1.0 - NOMINAL.alpha, abs=1e-6)
    assert x < 1.0 - NOMINAL.alpha


class TestInfeasible:
    def test_below_free_equilibrium(self):
        with pytest.raises(InfeasibleTarget):
            invert_feedforward(NOMINAL, 0.3, 0.5)

    def test_above_ceiling(self):
        with pytest.raises(InfeasibleTarget):
            invert_feedforward(NOMINAL, 0.3, 0.97)

    def test_saturates(self):
        ff = invert_feedforward(NOMINAL, 0.01, 0.9)
        assert ff.saturated and ff.duty == 1.0

    def test_bad_gamma(self):
        with pytest.raises(ValueError):
            invert_feedforward(NOMINAL, 0.0, 0.9)


def test_small_alpha_approximation():
    p = PlantParams(d=0.0015)
    assert p.alpha == pytest.approx(0.003)
    # gap at eta = 0 is alpha*beta/(beta - 1) to leading order
    for frac in np.linspace(0.0, 0.05, 11):
        duty = frac * (p.beta - 1.0) * p.kappa / 0.3
        approx, valid = approx_equilibrium(p, 0.3, duty)
        assert valid
        exact = averaged_equilibrium(p, 0.3, duty)
        assert abs(approx - exact) / exact <= 0.01


@pytest.mark.parametrize("frac", [0.0, 0.5, 0.9])
def test_small_alpha_gap_is_first_order(frac):
    gaps = []
    for d in (0.0015, 0.00015):
        p = PlantParams(d=d)
        duty = frac * (p.beta - 1.0) * p.kappa / 0.3
        approx, _ = approx_equilibrium(p, 0.3, duty)
        exact = averaged_equilibrium(p, 0.3, duty)
        gaps.append(abs(approx - exact) / exact)
    assert 0.05 <= gaps[1] / gaps[0] <= 0.2


def test_approximation_flags_other_branch():
    _, valid = approx_equilibrium(NOMINAL, 0.3, 0.9)
    assert not valid


class TestCurve:
    def test_matches_closed_form(self):
        curve = tabulate_feedforward_curve(NOMINAL, 0.3, 101)
        assert curve.duties.shape == (101,)
        targets = np.linspace(curve.values[0], curve.values[-1], 101)
        for y in targets:
            assert abs(curve.lookup(y) - invert_feedforward(NOMINAL, 0.3, y).duty) <= 0.005

    def test_nominal_lookup(self):
        curve = tabulate_feedforward_curve(NOMINAL, 0.3, 101)
        assert abs(curve.lookup(0.9) - 0.309524) <= 0.005
        assert curve(0.31) == pytest.approx(averaged_equilibrium(NOMINAL, 0.3, 0.31), abs=1e-4)

    def test_outside_range(self):
        curve = tabulate_feedforward_curve(NOMINAL, 0.3, 11)
        with pytest.raises(InfeasibleTarget):
            curve.lookup(0.96)

    def test_csv(self):
        text = tabulate_feedforward_curve(NOMINAL, 0.3, 5).to_csv()
        lines = text.splitlines()
        assert lines[0] == "D,B_av_star"
        assert len(lines) == 6


class TestOpenLoopCondition:
    def test_values(self):
        assert open_loop_condition(NOMINAL, 0.1) == pytest.approx(0.01525, abs=1e-12)
        assert open_loop_condition(NOMINAL, 0.0) == pytest.approx(0.02275, abs=1e-12)

    def test_decreasing_in_delta(self):
        bounds = [open_loop_condition(NOMINAL, d) for d in (0.0, 0.1, 0.2, 0.5)]
        assert np.all(np.diff(bounds) < 0)

    def test_negative_delta(self):
        with pytest.raises(ValueError):
            open_loop_condition(NOMINAL, -0.1)
