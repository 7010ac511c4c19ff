import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import point, unit_drive
from rotorlock.dynamics import IntegratorSettings
from rotorlock.limitcycle import classify, lock_argument, locked_state_guess, phase_lag_analytic
from rotorlock.params import (
    MBAR,
    DriveConfig,
    GasEnvironment,
    LaserField,
    Nanorod,
    coefficients,
    damping_per_pascal,
)
from rotorlock.sensing import (
    OutOfModelError,
    calibrate_pressure,
    damping_from_phase,
    external_torque_dynamics,
    external_torque_phase,
    lockin_phase_lag,
    phase_from_pressure,
    phase_pressure_slope,
    phase_torque_derivative,
    power_noise_phase_rms,
    power_noise_pressure_resolution,
    pressure_from_phase,
    pressure_resolution,
    torque_sensitivity,
)

ROD, GAS, LASER = Nanorod(), GasEnvironment(), LaserField()
DRIVE = DriveConfig(1.11e6)


def test_closed_form_inversion_independent_oracle():
    # Gamma = [N - (2V/pi) cos phi] / (2 pi f_d I), written out directly
    c = coefficients(ROD, GAS, LASER)
    phi = 1.4
    gamma = (c.torque - 2 * c.potential / math.pi * math.cos(phi)) / (2 * math.pi * DRIVE.frequency * c.inertia)
    assert damping_from_phase(phi, c, DRIVE) == pytest.approx(gamma, rel=1e-13)


@given(p=st.floats(min_value=1.0, max_value=1900.0))
def test_pressure_round_trip(p):
    phi = phase_from_pressure(p, ROD, GAS, LASER, DRIVE)
    assert phi is not None
    assert pressure_from_phase(phi, ROD, GAS, LASER, DRIVE) == pytest.approx(p, rel=1e-12)


@given(phi=st.floats(min_value=1.3, max_value=3.0))
def test_phase_round_trip(phi):
    p = pressure_from_phase(phi, ROD, GAS, LASER, DRIVE)
    assert phase_from_pressure(p, ROD, GAS, LASER, DRIVE) == pytest.approx(phi, rel=1e-12)


def test_half_pi_balances_torque_and_drag():
    p = pressure_from_phase(math.pi / 2, ROD, GAS, LASER, DRIVE)
    c = coefficients(ROD, GAS.with_pressure(p), LASER)
    assert c.torque == pytest.approx(2 * math.pi * DRIVE.frequency * c.inertia * c.damping, rel=1e-12)


def test_inversion_errors():
    with pytest.raises(OutOfModelError, match="negative pressure"):
        pressure_from_phase(0.5, ROD, GAS, LASER, DRIVE)
    for bad in (0.0, math.pi, -0.1):
        with pytest.raises(OutOfModelError):
            pressure_from_phase(bad, ROD, GAS, LASER, DRIVE)


def test_gas_template_pressure_is_ignored():
    a = pressure_from_phase(1.5, ROD, GAS, LASER, DRIVE)
    b = pressure_from_phase(1.5, ROD, GAS.with_pressure(1e4), LASER, DRIVE)
    assert a == b


def test_lockin_round_trip_single_pressure():
    # the sensing loop runs at 2 MHz, where the phase-pressure slope is steep
    p, d = 4.0 * MBAR, DriveConfig(2e6)
    c = coefficients(ROD, GAS.with_pressure(p), LASER)
    phi, rep = lockin_phase_lag(c, d)
    assert rep.kind == "lock_1_2"
    assert abs(phi - rep.phase_lag) < 1e-3
    assert pressure_from_phase(phi, ROD, GAS, LASER, d) == pytest.approx(p, rel=0.005)


# ------------------------------------------------------------ calibration


def _eq2_points(pressures):
    return np.array([phase_from_pressure(p, ROD, GAS, LASER, DRIVE) for p in pressures])


def test_narrow_calibration_slope_matches_derivative():
    ps = np.linspace(390.0, 410.0, 5)
    cal = calibrate_pressure(ps, _eq2_points(ps))
    assert cal.linear
    h = 1e-3
    fd = (phase_from_pressure(400 + h, ROD, GAS, LASER, DRIVE) - phase_from_pressure(400 - h, ROD, GAS, LASER, DRIVE)) / (2 * h)
    assert cal.slope == pytest.approx(fd, rel=0.02)
    c = coefficients(ROD, GAS, LASER)
    closed = phase_pressure_slope(c, DRIVE, damping_per_pascal(ROD, GAS))
    assert closed == pytest.approx(fd, rel=1e-6)
    assert cal.validity == (390.0, 410.0)
    assert np.all(np.abs(cal.pressure(cal.phases) - ps) < 0.01)


def test_duplicate_pressures_flag_large_residual():
    cal = calibrate_pressure([400, 400, 420, 440], [1.50, 1.62, 1.58, 1.62])
    assert math.isfinite(cal.slope)
    assert not cal.linear


def test_full_branch_trips_nonlinearity():
    lo = pressure_from_phase(1.3, ROD, GAS, LASER, DRIVE)
    hi = pressure_from_phase(3.05, ROD, GAS, LASER, DRIVE)
    ps = np.linspace(lo, hi, 9)
    cal = calibrate_pressure(ps, _eq2_points(ps))
    assert not cal.linear
    assert cal.max_residual > 0.01 * cal.span


def test_unlocked_points_rejected():
    with pytest.raises(ValueError, match=r"indices \[1\]"):
        calibrate_pressure([1, 2, 3], [1.0, math.nan, 1.2])
    with pytest.raises(ValueError, match=r"indices \[2\]"):
        calibrate_pressure([1, 2, 3], [1.0, 1.1, 1.2], locked=[True, True, False])
    with pytest.raises(ValueError):
        calibrate_pressure([1, 2], [1.0, 1.1])
    with pytest.raises(ValueError):
        calibrate_pressure([2, 2, 2], [1.0, 1.1, 1.2])


def test_weighted_calibration_favours_precise_points():
    ps = [1.0, 2.0, 3.0, 4.0]
    ph = [1.0, 2.0, 3.0, 10.0]
    loose = calibrate_pressure(ps, ph, sigma=[0.01, 0.01, 0.01, 100.0])
    assert loose.slope == pytest.approx(1.0, rel=1e-3)


# ------------------------------------------------------------ resolution


def test_resolution_scaling():
    ps = np.linspace(390.0, 410.0, 5)
    cal = calibrate_pressure(ps, _eq2_points(ps))
    assert pressure_resolution(cal, 0.0) == 0.0
    r = pressure_resolution(cal, 1e-3)
    assert pressure_resolution(cal, 5e-4) == pytest.approx(0.5 * r, rel=1e-14)
    assert r == pytest.approx(1e-3 / (abs(cal.slope) * 400.0), rel=1e-14)
    with pytest.raises(ValueError):
        pressure_resolution(cal, -1.0)


def test_power_noise_phase_is_finite_difference_of_power():
    c = coefficients(ROD, GAS, LASER)
    eps = 1e-6
    up = phase_lag_analytic(coefficients(ROD, GAS, LaserField(power=LASER.power * (1 + eps))), DRIVE)
    dn = phase_lag_analytic(coefficients(ROD, GAS, LaserField(power=LASER.power * (1 - eps))), DRIVE)
    slope = abs(up - dn) / (2 * eps)
    assert power_noise_phase_rms(c, DRIVE, 0.003) == pytest.approx(0.003 * slope, rel=1e-6)


def test_quasi_static_resolution_reference_order():
    est = power_noise_pressure_resolution(ROD, GAS, LASER, DRIVE)
    assert est.method == "quasi-static"
    assert 0.001 < est.relative < 0.009


# ------------------------------------------------------------ external torque


EXT = point(0.03, 0.3)
FAST = IntegratorSettings(steps_per_half_period=40)


def test_zero_external_torque_matches_classify():
    d = unit_drive()
    rep0 = external_torque_dynamics(EXT, d, 0.0, locked_state_guess(EXT, d), FAST)
    ref = classify(EXT, d, locked_state_guess(EXT, d), FAST)
    assert rep0.kind == ref.kind
    assert rep0.phase_lag == pytest.approx(ref.phase_lag, abs=1e-9)


@pytest.mark.parametrize("n_ext", [0.008, -0.008])
def test_small_external_torque_shift(n_ext):
    d = unit_drive()
    base = external_torque_dynamics(EXT, d, 0.0, settings=FAST)
    moved = external_torque_dynamics(EXT, d, n_ext, settings=FAST)
    predicted = external_torque_phase(EXT, d, n_ext) - phase_lag_analytic(EXT, d)
    measured = moved.phase_lag - base.phase_lag
    assert abs(predicted) > 0.01
    assert measured == pytest.approx(predicted, rel=0.05)


def test_large_external_torque_loses_lock_at_boundary():
    d = unit_drive()
    # arccos argument reaches -1 (torque too weak) at this N_ext
    v = EXT.potential
    x0 = lock_argument(EXT, d)
    boundary = -(x0 + 1.0) * v / math.pi
    grid = np.linspace(0.5, 1.5, 11) * boundary
    step = abs(grid[1] - grid[0])
    locked = []
    for n in grid:
        rep = external_torque_dynamics(EXT, d, float(n), settings=FAST)
        locked.append(rep.kind == "lock_1_2")
        assert (external_torque_phase(EXT, d, float(n)) is not None) == (n >= boundary)
    # first unlocked point within one grid step of the analytic boundary
    first_lost = grid[locked.index(False)]
    assert all(locked[: locked.index(False)])
    assert abs(first_lost - boundary) <= step


# ------------------------------------------------------------ torque sensitivity


def test_half_pi_closed_form():
    c = point(0.02, 2 * math.pi * 0.02)
    d = unit_drive()
    assert phase_lag_analytic(c, d) == pytest.approx(math.pi / 2)
    rep = torque_sensitivity(c, d, 1e-3, bandwidth=0.3)
    assert rep.torque == pytest.approx(2 * c.potential / math.pi * 1e-3, rel=1e-12)
    assert rep.external_torque == pytest.approx(0.5 * rep.torque)
    assert rep.bandwidth == 0.3
    assert torque_sensitivity(c, d, 0.0).torque == 0.0


@pytest.mark.parametrize("k", range(20))
def test_derivative_matches_finite_difference(k):
    d = unit_drive()
    x = -0.95 + 1.9 * k / 19
    gamma = 0.02
    c = point(gamma, 1.0)  # N/V from the torque only matters through x
    v = c.potential
    n = x * 2 * v / math.pi + 2 * math.pi * gamma
    from rotorlock.params import scaled_coefficients

    c = scaled_coefficients(gamma, n, v)
    h = 1e-5 * v
    up = phase_lag_analytic(scaled_coefficients(gamma, n + h, v), d)
    dn = phase_lag_analytic(scaled_coefficients(gamma, n - h, v), d)
    fd = (up - dn) / (2 * h)
    phi = phase_lag_analytic(c, d)
    closed = -(math.pi / (2 * v)) / math.sin(phi)
    assert phase_torque_derivative(c, d) == pytest.approx(closed, rel=1e-12)
    assert fd == pytest.approx(closed, rel=1e-6)


def test_sensitivity_scan_extremum_at_half_pi():
    # dN = (2V/pi) sin(phi) dphi peaks at phi = pi/2 (widest linear range);
    # smaller dN towards the branch ends comes with vanishing range
    d = unit_drive()
    v, gamma = 0.5, 0.02
    from rotorlock.params import scaled_coefficients

    xs = np.linspace(-0.98, 0.98, 99)
    phis, dns = [], []
    for x in xs:
        c = scaled_coefficients(gamma, x * 2 * v / math.pi + 2 * math.pi * gamma, v)
        rep = torque_sensitivity(c, d, 1e-3)
        phis.append(rep.phase_lag)
        dns.append(rep.torque)
    k = int(np.argmax(dns))
    assert abs(phis[k] - math.pi / 2) <= abs(phis[1] - phis[0])


def test_sensitivity_errors():
    d = unit_drive()
    c = point(0.02, 0.3)
    with pytest.raises(OutOfModelError):
        torque_sensitivity(c, d, 1e-3, phi=0.0)
    with pytest.raises(OutOfModelError):
        torque_sensitivity(c, d, 1e-3, phi=math.pi)
    with pytest.raises(ValueError):
        torque_sensitivity(c, d, -1.0)
    with pytest.raises(OutOfModelError):
        torque_sensitivity(point(0.02, 0.01), d, 1e-3)
