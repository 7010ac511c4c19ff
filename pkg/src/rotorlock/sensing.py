"""The locked rotor as a pressure and torque sensor.

Inverting the averaged 1:2 balance (see :mod:`rotorlock.limitcycle`) for the
damping rate at duty D gives

    Gamma = [D N - (V / pi) sin(pi D) cos(phi)] / (pi f_d I)

which at D = 1/2 is Gamma = [N - (2V/pi) cos(phi)] / (2 pi f_d I); pressure
follows from the linear dependence of Gamma on p_g.

A constant external torque N_ext acts during the whole period while N acts
only during the circular fraction D, so in the averaged balance it enters as
N -> N + N_ext / D (N + 2 N_ext at D = 1/2).

Laser power fluctuations scale N and V together. N/V is power independent,
so only the drag term of the lock argument x responds:
dx/d(ln P) = pi^2 f_d I Gamma / (V sin(pi D)).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from rotorlock.dynamics import IntegratorSettings, RotorState, simulate
from rotorlock.limitcycle import (
    LimitCycleReport,
    classify,
    locked_state_guess,
    phase_lag_analytic,
    phase_offset,
)
from rotorlock.params import (
    Coefficients,
    DriveConfig,
    GasEnvironment,
    GeometricFactors,
    LaserField,
    Nanorod,
    coefficients,
    damping_per_pascal,
    optical_potential,
    optical_torque,
    moment_of_inertia,
)
from rotorlock import signal as sig


class OutOfModelError(ValueError):
    """Inputs are outside the range where the locked-phase model applies."""


def _check_phase(phi: float):
    if not 0.0 < phi < math.pi:
        raise OutOfModelError(f"phase lag {phi!r} rad is outside the open interval (0, pi)")


def damping_from_phase(phi: float, coeffs: Coefficients, drive: DriveConfig) -> float:
    _check_phase(phi)
    d = drive.duty
    num = d * coeffs.torque - coeffs.potential * math.sin(math.pi * d) * math.cos(phi) / math.pi
    return num / (math.pi * drive.frequency * coeffs.inertia)


def pressure_from_phase(
    phi: float,
    rod: Nanorod,
    gas: GasEnvironment,
    laser: LaserField,
    drive: DriveConfig,
    geom: GeometricFactors = GeometricFactors(),
) -> float:
    """Gas pressure (Pa) whose 1:2 lock has phase lag ``phi``.

    ``gas`` supplies temperature and molecular mass; its pressure is ignored.
    """
    coeffs = Coefficients(
        0.0, optical_torque(rod, laser, geom), optical_potential(rod, laser), moment_of_inertia(rod)
    )
    gamma = damping_from_phase(phi, coeffs, drive)
    p = gamma / damping_per_pascal(rod, gas)
    if p < 0:
        raise OutOfModelError(
            f"phase lag {phi:.6g} rad implies negative pressure {p:.6g} Pa; "
            "torque, potential or drive settings are inconsistent"
        )
    return p


def phase_from_pressure(
    pressure: float,
    rod: Nanorod,
    gas: GasEnvironment,
    laser: LaserField,
    drive: DriveConfig,
    geom: GeometricFactors = GeometricFactors(),
) -> float | None:
    return phase_lag_analytic(coefficients(rod, gas.with_pressure(pressure), laser, geom), drive)


def phase_torque_derivative(coeffs: Coefficients, drive: DriveConfig, phi: float | None = None) -> float:
    """Closed-form dphi/dN; -(pi / 2V) / sin(phi) at duty 1/2."""
    if phi is None:
        phi = phase_lag_analytic(coeffs, drive)
        if phi is None:
            raise OutOfModelError("operating point is outside the lockable region")
    _check_phase(phi)
    d = drive.duty
    return -math.pi * d / (coeffs.potential * math.sin(math.pi * d) * math.sin(phi))


def phase_pressure_slope(
    coeffs: Coefficients, drive: DriveConfig, damping_per_pa: float, phi: float | None = None
) -> float:
    """Calibration slope dphi/dp_g; (dGamma/dp_g) pi^2 f_d I / (V sin phi) at duty 1/2."""
    if phi is None:
        phi = phase_lag_analytic(coeffs, drive)
        if phi is None:
            raise OutOfModelError("operating point is outside the lockable region")
    _check_phase(phi)
    dxdg = -math.pi**2 * drive.frequency * coeffs.inertia / (
        coeffs.potential * math.sin(math.pi * drive.duty)
    )
    return -dxdg * damping_per_pa / math.sin(phi)


@dataclass
class PressureCalibration:
    slope: float  # rad / Pa
    intercept: float  # rad
    pressures: np.ndarray  # Pa
    phases: np.ndarray  # rad
    residuals: np.ndarray  # rad
    sigma: np.ndarray | None = None  # optional per-point phase uncertainty, rad
    # linear model holds when every residual is below this fraction of the phase span
    linearity_tolerance: float = 0.01

    @property
    def validity(self) -> tuple[float, float]:
        return float(self.pressures.min()), float(self.pressures.max())

    @property
    def span(self) -> float:
        return float(self.phases.max() - self.phases.min())

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals)))

    @property
    def linear(self) -> bool:
        return self.span > 0 and self.max_residual < self.linearity_tolerance * self.span

    def phase(self, pressure):
        return self.slope * np.asarray(pressure) + self.intercept

    def pressure(self, phase):
        return (np.asarray(phase) - self.intercept) / self.slope

    def as_dict(self) -> dict:
        return {
            "slope_rad_per_pa": self.slope,
            "intercept_rad": self.intercept,
            "validity_pa": list(self.validity),
            "max_residual_rad": self.max_residual,
            "phase_span_rad": self.span,
            "linear": self.linear,
            "linearity_tolerance": self.linearity_tolerance,
            "points": [
                {"pressure_pa": float(p), "phase_rad": float(f), "residual_rad": float(r)}
                for p, f, r in zip(self.pressures, self.phases, self.residuals)
            ],
        }


def calibrate_pressure(pressures, phases, locked=None, sigma=None) -> PressureCalibration:
    """Straight-line fit of phase against pressure over locked points.

    Unlocked points (``locked`` false or phase NaN) are rejected with a
    ValueError naming them. Nonlinearity is reported through ``linear``.
    """
    p = np.asarray(pressures, dtype=float)
    f = np.asarray(phases, dtype=float)
    if p.shape != f.shape or p.ndim != 1:
        raise ValueError("pressures and phases must be 1-D sequences of equal length")
    bad = ~np.isfinite(f)
    if locked is not None:
        bad |= ~np.asarray(locked, dtype=bool)
    if np.any(bad):
        raise ValueError(f"unlocked calibration points at indices {np.flatnonzero(bad).tolist()}")
    if p.size < 3:
        raise ValueError("calibration needs at least 3 points")
    if np.ptp(p) == 0:
        raise ValueError("calibration pressures must span a range")
    w = None
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
        w = 1.0 / sigma
    slope, intercept = np.polyfit(p, f, 1, w=w)
    if not (math.isfinite(slope) and slope != 0):
        raise ValueError("calibration slope is zero or not finite")
    resid = f - (slope * p + intercept)
    return PressureCalibration(float(slope), float(intercept), p, f, resid, sigma)


def pressure_resolution(
    calibration: PressureCalibration, dphi_rms: float, pressure: float | None = None
) -> float:
    """Relative pressure resolution dphi / (|slope| p) at ``pressure``
    (default: centre of the calibrated range)."""
    if dphi_rms < 0:
        raise ValueError("dphi_rms must be >= 0")
    if pressure is None:
        pressure = 0.5 * sum(calibration.validity)
    return dphi_rms / (abs(calibration.slope) * pressure)


def power_noise_phase_rms(coeffs: Coefficients, drive: DriveConfig, power_rms: float) -> float:
    """Quasi-static phase fluctuation from relative power noise ``power_rms``."""
    phi = phase_lag_analytic(coeffs, drive)
    if phi is None:
        raise OutOfModelError("operating point is outside the lockable region")
    _check_phase(phi)
    dx = math.pi**2 * drive.frequency * coeffs.inertia * coeffs.damping / (
        coeffs.potential * math.sin(math.pi * drive.duty)
    )
    return dx * power_rms / math.sin(phi)


@dataclass(frozen=True)
class PhaseSample:
    phase: float  # rad
    report: LimitCycleReport


def measured_phase(
    coeffs: Coefficients,
    drive: DriveConfig,
    settings: IntegratorSettings = IntegratorSettings(),
    *,
    external_torque: float = 0.0,
    initial: RotorState | None = None,
) -> PhaseSample:
    """Classify from a near-locked start and return the fitted phase lag.

    The transient is at least 40 damping times so slow capture is complete.
    """
    if initial is None:
        probe = coeffs
        if external_torque:
            probe = replace(coeffs, torque=coeffs.torque + external_torque / drive.duty)
        initial = locked_state_guess(probe, drive)
    relax = int(40 * drive.frequency / coeffs.damping) if coeffs.damping > 0 else 0
    s = replace(settings, transient_periods=max(settings.transient_periods, relax))
    rep = classify(coeffs, drive, initial, s, external_torque=external_torque)
    return PhaseSample(math.nan if rep.phase_lag is None else rep.phase_lag, rep)


def external_torque_dynamics(
    coeffs: Coefficients,
    drive: DriveConfig,
    external_torque: float,
    initial: RotorState | None = None,
    settings: IntegratorSettings = IntegratorSettings(),
) -> LimitCycleReport:
    """Classify with a constant torque ``external_torque`` (N m) added to the
    equation of motion at all times; loss of lock shows in ``kind``."""
    return measured_phase(
        coeffs, drive, settings, external_torque=external_torque, initial=initial
    ).report


def external_torque_phase(coeffs: Coefficients, drive: DriveConfig, external_torque: float):
    """Averaged-balance phase lag with N -> N + N_ext / duty (None if unlockable)."""
    shifted = replace(coeffs, torque=coeffs.torque + external_torque / drive.duty)
    return phase_lag_analytic(shifted, drive)


@dataclass(frozen=True)
class TorqueSensitivityReport:
    dphi: float  # rad
    torque: float  # N m, resolvable change of the drive torque N
    external_torque: float  # N m, resolvable constant torque (duty * torque)
    bandwidth: float | None  # Hz
    phase_lag: float  # rad, operating point
    operating_point: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def torque_sensitivity(
    coeffs: Coefficients,
    drive: DriveConfig,
    dphi: float,
    bandwidth: float | None = None,
    phi: float | None = None,
) -> TorqueSensitivityReport:
    """Minimum detectable torque dN = dphi / |dphi/dN|; (2V/pi) sin(phi) dphi
    at duty 1/2. A constant external torque needs duty times less."""
    if dphi < 0:
        raise ValueError("dphi must be >= 0")
    if phi is None:
        phi = phase_lag_analytic(coeffs, drive)
        if phi is None:
            raise OutOfModelError("operating point is outside the lockable region")
    if not 0.0 < phi < math.pi:
        raise OutOfModelError("torque sensitivity diverges at phi = 0 or pi")
    dn = dphi / abs(phase_torque_derivative(coeffs, drive, phi))
    point = {"coefficients": coeffs.as_dict(), "drive": asdict(drive)}
    return TorqueSensitivityReport(dphi, dn, drive.duty * dn, bandwidth, phi, point)


@dataclass(frozen=True)
class ChainSettings:
    """Measurement chain used to read the phase lag from the detector."""

    intermediate: float = 190.0  # Hz, tone after mixing
    output_rate: float = 2000.0  # S/s
    record: float = 0.25  # s
    time_constant: float = 0.02  # s
    settle_time: float = 0.1  # s, lock-in output ignored before this
    samples_per_period: int = 16
    detector_angle: float = 0.0


def lockin_phase_lag(
    coeffs: Coefficients,
    drive: DriveConfig,
    settings: IntegratorSettings = IntegratorSettings(),
    chain: ChainSettings = ChainSettings(),
    noise: sig.NoiseSpec = sig.NOISELESS,
    external_torque: float = 0.0,
) -> tuple[float, LimitCycleReport]:
    """Phase lag read through detector, mix-down and lock-in.

    The rotor is driven into its locked cycle, one converged period is
    repeated for the record length, and the lock-in phase theta of the
    detector tone gives phi = pi - theta - 2 alpha_det (duty 1/2).

    The in-period wobble of alpha leaks its second harmonic into the
    detector fundamental with a weight that varies as 4 alpha_det, so phi
    carries a systematic offset from the strobed phase lag (about 1e-3 rad
    at 1.11 MHz, smallest near alpha_det = 0).
    """
    steps = 2 * settings.steps_per_half_period
    if steps % chain.samples_per_period:
        raise ValueError("samples_per_period must divide the steps per period")
    sample = measured_phase(coeffs, drive, settings, external_torque=external_torque)
    rep = sample.report
    if rep.kind != "lock_1_2":
        raise OutOfModelError(f"operating point is not 1:2 locked ({rep.kind})")
    st = replace(settings, stride=steps // chain.samples_per_period)
    traj = simulate(rep.final_state, coeffs, drive, st, 4, external_torque=external_torque)
    cycle = sig.LockedCycle.from_trajectory(traj, 1)
    n = int(round(chain.record * cycle.sample_rate))
    src = sig.CycleSource(cycle, n, chain.detector_angle, noise)
    mixed = sig.mix_down(src, drive.frequency - chain.intermediate, chain.output_rate)
    out = sig.lockin_demodulate(mixed, chain.intermediate, chain.time_constant)
    theta = sig.settled_phase(out, mixed.start_time + chain.settle_time)
    phi = phase_offset(drive) - theta - 2.0 * chain.detector_angle
    return abs(math.remainder(phi, 2.0 * math.pi)), rep


@dataclass(frozen=True)
class ResolutionEstimate:
    relative: float  # delta p / p
    phase_rms: float  # rad
    method: str
    samples: tuple = ()


def power_noise_pressure_resolution(
    rod: Nanorod,
    gas: GasEnvironment,
    laser: LaserField,
    drive: DriveConfig,
    geom: GeometricFactors = GeometricFactors(),
    power_rms: float = 0.003,
    realizations: int = 0,
    seed: int = 0,
    settings: IntegratorSettings = IntegratorSettings(),
) -> ResolutionEstimate:
    """Relative pressure resolution limited by laser power noise.

    With ``realizations == 0`` the quasi-static propagation through the
    averaged balance is used. Otherwise each realization simulates the locked
    rotor at a power drawn from N(P, (power_rms P)^2), fits the phase lag and
    inverts it with the nominal power; the spread of inferred pressures is
    the resolution.
    """
    coeffs = coefficients(rod, gas, laser, geom)
    if realizations == 0:
        dphi = power_noise_phase_rms(coeffs, drive, power_rms)
        slope = phase_pressure_slope(coeffs, drive, damping_per_pascal(rod, gas))
        return ResolutionEstimate(dphi / (abs(slope) * gas.pressure), dphi, "quasi-static")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(realizations) * power_rms
    phases, inferred = [], []
    for e in eps:
        lz = replace(laser, power=laser.power * (1.0 + e))
        s = measured_phase(coefficients(rod, gas, lz, geom), drive, settings)
        if not math.isfinite(s.phase):
            raise OutOfModelError(f"lock lost at relative power offset {e:+.4f}")
        phases.append(s.phase)
        inferred.append(pressure_from_phase(s.phase, rod, gas, laser, drive, geom))
    inferred = np.array(inferred)
    return ResolutionEstimate(
        float(np.std(inferred, ddof=1) / gas.pressure),
        float(np.std(phases, ddof=1)),
        f"monte-carlo ({realizations} realizations)",
        tuple(float(v) for v in inferred),
    )
