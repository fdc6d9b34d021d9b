import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polqkd.errors import InvalidParameter
from polqkd.optics import (
    PolarizationPhase,
    PowerLevel,
    apply_attenuation,
    fiber_loss_db,
    pbs_h_probability,
    pbs_v_probability,
    phase_for_voltage,
    poisson_cdf,
    poisson_tail,
    sample_poisson,
    state_amplitudes,
)

angles = st.floats(-20.0, 20.0, allow_nan=False)


@pytest.mark.parametrize("v, expected", [(0, 0.0), (4, math.pi), (2, math.pi / 2), (8, 0.0)])
def test_phase_for_voltage(v, expected):
    assert phase_for_voltage(v, 4.0, 0.0) == pytest.approx(expected, abs=1e-12)


def test_phase_for_voltage_offset_shifts_window():
    # uncalibrated controllers: switching window moves to 2..6 V
    assert phase_for_voltage(2.0, 4.0, 2.0) == 0.0
    assert phase_for_voltage(6.0, 4.0, 2.0) == pytest.approx(math.pi)


@pytest.mark.parametrize("v_pi", [0.0, -1.0])
def test_phase_for_voltage_rejects_bad_vpi(v_pi):
    with pytest.raises(InvalidParameter):
        phase_for_voltage(1.0, v_pi)


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_phase_always_reduced(phi):
    p = PolarizationPhase(phi)
    assert 0.0 <= p < 2 * math.pi


def test_phase_reduction_of_tiny_negative():
    assert PolarizationPhase(-1e-18) == 0.0


def test_state_amplitudes():
    assert state_amplitudes(0.0) == pytest.approx((1.0, 0.0))
    assert state_amplitudes(math.pi) == pytest.approx((0.0, 1.0), abs=1e-15)
    a = state_amplitudes(math.pi / 2)
    assert a.a_h == pytest.approx(0.70710678118654752, abs=1e-15)
    assert a.a_v == pytest.approx(0.70710678118654752, abs=1e-15)


@given(angles)
def test_state_normalized(phi):
    a = state_amplitudes(phi)
    assert abs(a.a_h**2 + a.a_v**2 - 1.0) < 1e-12


def test_pbs_values():
    assert pbs_h_probability(0.0, 0.0) == 1.0
    assert pbs_h_probability(math.pi, 0.0) == pytest.approx(0.0, abs=1e-30)
    # cos^2(0.1) from 50-digit evaluation
    assert pbs_h_probability(0.0, 0.1) == pytest.approx(0.99003328892062081, abs=1e-15)


@given(angles, angles)
def test_pbs_normalization(phi, theta):
    assert abs(pbs_h_probability(phi, theta) + pbs_v_probability(phi, theta) - 1.0) < 1e-12


@given(angles)
def test_pbs_complementarity(phi):
    assert abs(pbs_h_probability(phi) - pbs_v_probability(phi + math.pi)) < 1e-12


def test_attenuation():
    assert apply_attenuation(PowerLevel(0.0), 21.55).value_dbm == pytest.approx(-21.55, abs=1e-9)
    assert apply_attenuation(PowerLevel(-3.0), 0.0).value_dbm == -3.0
    assert apply_attenuation(PowerLevel(-21.55), 10.0).value_dbm == pytest.approx(-31.55, abs=1e-9)
    with pytest.raises(InvalidParameter):
        apply_attenuation(PowerLevel(0.0), -1.0)


@given(st.floats(-60, 30), st.floats(0, 50), st.floats(0, 50))
def test_attenuation_additive(p, a, b):
    two = apply_attenuation(apply_attenuation(PowerLevel(p), a), b)
    one = apply_attenuation(PowerLevel(p), a + b)
    assert abs(two.value_dbm - one.value_dbm) < 1e-9


@given(st.floats(-60, 30))
def test_power_round_trip(dbm):
    assert abs(PowerLevel.from_mw(PowerLevel(dbm).mw).value_dbm - dbm) < 1e-9


def test_one_milliwatt_is_zero_dbm():
    assert PowerLevel.from_mw(1.0).value_dbm == 0.0
    # 7 uW at the link end is the same number as -21.55 dBm
    assert PowerLevel(-21.55).uw == pytest.approx(7.0, rel=0.01)


def test_fiber_loss():
    assert fiber_loss_db(5.0, 0.2) == pytest.approx(1.0)
    assert fiber_loss_db(0.0, 0.3) == 0.0
    loss = fiber_loss_db(5.0, 0.141)
    assert loss == pytest.approx(0.705)
    assert 10 ** (-loss / 10) == pytest.approx(0.850, abs=1e-3)
    for bad in [(-1.0, 0.2), (1.0, -0.2)]:
        with pytest.raises(InvalidParameter):
            fiber_loss_db(*bad)


def test_poisson_zero_mean():
    rng = np.random.default_rng(1)
    assert all(sample_poisson(0.0, rng) == 0 for _ in range(100))
    with pytest.raises(InvalidParameter):
        sample_poisson(-1.0, rng)


def test_poisson_moments():
    draws = sample_poisson(np.full(10**6, 200.0), np.random.default_rng(2))
    assert abs(draws.mean() - 200) < 3 * math.sqrt(200 / 1e6)
    assert 0.98 <= draws.var() / draws.mean() <= 1.02


def test_poisson_deterministic():
    a = sample_poisson(np.full(1000, 75.0), np.random.default_rng(9))
    b = sample_poisson(np.full(1000, 75.0), np.random.default_rng(9))
    assert a.tobytes() == b.tobytes()


# (mean, threshold, P(K >= threshold)) from 50-digit mpmath summation
TAILS = [
    (75, 138, 4.777480908538687e-11),
    (200, 138, 0.9999985198964923),
    (75, 50, 0.99909606795764599),
    (25, 50, 6.953305247616099e-6),
    (25, 138, 2.0153654194300977e-55),
    (3.5, 2, 0.86411177459956675),
    (1000, 1100, 0.00096263040586655716),
    (800, 700, 0.99985594984617895),
]


@pytest.mark.parametrize("mean, threshold, expected", TAILS)
def test_poisson_tail_reference(mean, threshold, expected):
    assert poisson_tail(mean, threshold) == pytest.approx(expected, rel=1e-12)


def test_poisson_tail_trivial():
    assert poisson_tail(0.0, 1) == 0.0
    assert poisson_tail(0.0, 0) == 1.0
    assert poisson_tail(123.4, 0) == 1.0
    assert poisson_tail(75, 138) < 1e-10


def test_poisson_lower_tail_precision():
    # H pulse read below the H/V threshold
    assert poisson_cdf(200, 137) == pytest.approx(1.4801035076959326e-6, rel=1e-12)


@pytest.mark.parametrize("mean", [25.0, 75.0, 200.0])
def test_poisson_oracle_consistency(mean):
    n = 10**6
    draws = sample_poisson(np.full(n, mean), np.random.default_rng(int(mean)))
    for t in [int(mean - 2 * math.sqrt(mean)), int(mean), int(mean + math.sqrt(mean))]:
        p = poisson_tail(mean, t)
        freq = np.mean(draws >= t)
        se = math.sqrt(p * (1 - p) / n)
        assert abs(freq - p) <= 4 * se
