"""Physical description of rod, gas, laser and drive.

All quantities are SI. The three coefficients of the rotational equation of
motion are

    damping   Gamma = d l p sqrt(2 pi m_g) (6 + pi) / (8 M sqrt(k_B T))
    torque    N     = P dchi l^2 d^4 k^3 [dchi eta1 + chi_perp eta2] / (48 c w0^2)
    potential V     = P d^2 l dchi / (2 c w0^2)

with I = M l^2 / 12 and dchi = chi_par - chi_perp.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

# CODATA 2018 (both exact by SI definition)
K_B = 1.380649e-23
C_LIGHT = 299_792_458.0

MBAR = 100.0  # Pa

SILICON_INDEX_1550 = 3.48
_CHI_SI = SILICON_INDEX_1550**2 - 1.0


@dataclass(frozen=True)
class Nanorod:
    length: float = 725e-9
    diameter: float = 130e-9
    mass: float = 2.2e-17
    chi_parallel: float = _CHI_SI
    chi_perp: float = 0.5 * _CHI_SI

    def __post_init__(self):
        for name in ("length", "diameter", "mass"):
            if not getattr(self, name) > 0:
                raise ValueError(f"rod.{name} must be positive, got {getattr(self, name)!r}")
        if not self.chi_perp >= 0:
            raise ValueError("rod.chi_perp must be non-negative")
        if not self.delta_chi > 0:
            raise ValueError(
                "rod.chi_parallel must exceed rod.chi_perp (positive anisotropy)"
            )

    @property
    def delta_chi(self) -> float:
        return self.chi_parallel - self.chi_perp

    @property
    def inertia(self) -> float:
        return moment_of_inertia(self)


@dataclass(frozen=True)
class GasEnvironment:
    pressure: float = 4.0 * MBAR
    temperature: float = 300.0
    particle_mass: float = 4.8e-26

    def __post_init__(self):
        if not self.pressure >= 0:
            raise ValueError(f"gas.pressure must be >= 0, got {self.pressure!r}")
        if not self.temperature > 0:
            raise ValueError("gas.temperature must be positive")
        if not self.particle_mass > 0:
            raise ValueError("gas.particle_mass must be positive")

    def with_pressure(self, pressure: float) -> "GasEnvironment":
        return replace(self, pressure=pressure)


@dataclass(frozen=True)
class LaserField:
    power: float = 1.35
    wavelength: float = 1550e-9
    waist: float = 15e-6

    def __post_init__(self):
        if not self.power >= 0:
            raise ValueError("laser.power must be >= 0")
        if not self.wavelength > 0:
            raise ValueError("laser.wavelength must be positive")
        if not self.waist > 0:
            raise ValueError("laser.waist must be positive")

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength


@dataclass(frozen=True)
class DriveConfig:
    """Square-wave polarization schedule.

    The light is circularly polarized for the first ``duty`` fraction of every
    period (torque on) and linearly polarized for the rest (alignment on).
    """

    frequency: float = 1.11e6
    duty: float = 0.5

    def __post_init__(self):
        if not self.frequency > 0:
            raise ValueError("drive.frequency must be positive")
        if not 0.0 < self.duty < 1.0:
            raise ValueError("drive.duty must lie strictly between 0 and 1")

    @property
    def period(self) -> float:
        return 1.0 / self.frequency


@dataclass(frozen=True)
class GeometricFactors:
    eta1: float = 0.872
    eta2: float = 0.113

    def __post_init__(self):
        for name in ("eta1", "eta2"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"geometry.{name} must be finite and positive")


@dataclass(frozen=True)
class Coefficients:
    """Coefficients of the equation of motion (damping in 1/s, torque in N m,
    potential depth in J, inertia in kg m^2)."""

    damping: float
    torque: float
    potential: float
    inertia: float

    def __post_init__(self):
        if not self.inertia > 0:
            raise ValueError("inertia must be positive")
        for name in ("damping", "torque", "potential"):
            val = getattr(self, name)
            if not math.isfinite(val):
                raise ValueError(f"{name} must be finite")
        if self.damping < 0 or self.potential < 0:
            raise ValueError("damping and potential must be non-negative")

    @property
    def torque_accel(self) -> float:
        return self.torque / self.inertia

    @property
    def potential_accel(self) -> float:
        return self.potential / self.inertia

    def as_dict(self) -> dict:
        return asdict(self)


def moment_of_inertia(rod: Nanorod) -> float:
    return rod.mass * rod.length**2 / 12.0


def damping_rate(rod: Nanorod, gas: GasEnvironment) -> float:
    """Rotational gas damping rate in the free molecular regime (diffuse
    reflection). Linear in pressure."""
    return (
        rod.diameter
        * rod.length
        * gas.pressure
        * math.sqrt(2.0 * math.pi * gas.particle_mass)
        * (6.0 + math.pi)
        / (8.0 * rod.mass * math.sqrt(K_B * gas.temperature))
    )


def damping_per_pascal(rod: Nanorod, gas: GasEnvironment) -> float:
    """dGamma/dp_g; independent of the pressure stored in ``gas``."""
    return damping_rate(rod, gas.with_pressure(1.0))


def optical_torque(
    rod: Nanorod, laser: LaserField, geom: GeometricFactors = GeometricFactors()
) -> float:
    k = laser.wavenumber
    dchi = rod.delta_chi
    return (
        laser.power
        * dchi
        * rod.length**2
        * rod.diameter**4
        * k**3
        * (dchi * geom.eta1 + rod.chi_perp * geom.eta2)
        / (48.0 * C_LIGHT * laser.waist**2)
    )


def optical_potential(rod: Nanorod, laser: LaserField) -> float:
    return (
        laser.power
        * rod.diameter**2
        * rod.length
        * rod.delta_chi
        / (2.0 * C_LIGHT * laser.waist**2)
    )


def coefficients(
    rod: Nanorod,
    gas: GasEnvironment,
    laser: LaserField,
    geom: GeometricFactors = GeometricFactors(),
) -> Coefficients:
    return Coefficients(
        damping=damping_rate(rod, gas),
        torque=optical_torque(rod, laser, geom),
        potential=optical_potential(rod, laser),
        inertia=moment_of_inertia(rod),
    )


def dimensionless(coeffs: Coefficients, drive: DriveConfig) -> tuple[float, float, float]:
    """Return (Gamma/f_d, N/(I f_d^2), V/(I f_d^2))."""
    fd = drive.frequency
    scale = coeffs.inertia * fd * fd
    return coeffs.damping / fd, coeffs.torque / scale, coeffs.potential / scale


def redimensionalize(
    gamma: float, torque: float, potential: float, inertia: float, drive: DriveConfig
) -> Coefficients:
    """Inverse of :func:`dimensionless` for a given inertia and drive."""
    fd = drive.frequency
    scale = inertia * fd * fd
    return Coefficients(
        damping=gamma * fd, torque=torque * scale, potential=potential * scale, inertia=inertia
    )


def scaled_coefficients(gamma: float, torque: float, potential: float) -> Coefficients:
    """Coefficients in drive-period units (I = 1, f_d = 1)."""
    return Coefficients(damping=gamma, torque=torque, potential=potential, inertia=1.0)
