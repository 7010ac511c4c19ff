"""Simulation and analysis of an optically driven, frequency-locked nanorotor."""

from rotorlock.params import (
    Coefficients,
    DriveConfig,
    GasEnvironment,
    GeometricFactors,
    LaserField,
    Nanorod,
    coefficients,
    damping_rate,
    dimensionless,
    moment_of_inertia,
    optical_potential,
    optical_torque,
)
from rotorlock.dynamics import (
    IntegratorSettings,
    RotorState,
    SimulationError,
    Trajectory,
    drive_waveform,
    mean_rotation_frequency,
    simulate,
    step_segment,
    stroboscopic_map,
)

__version__ = "0.1.0"

__all__ = [
    "Coefficients",
    "DriveConfig",
    "GasEnvironment",
    "GeometricFactors",
    "IntegratorSettings",
    "LaserField",
    "Nanorod",
    "RotorState",
    "SimulationError",
    "Trajectory",
    "coefficients",
    "damping_rate",
    "dimensionless",
    "drive_waveform",
    "mean_rotation_frequency",
    "moment_of_inertia",
    "optical_potential",
    "optical_torque",
    "simulate",
    "step_segment",
    "stroboscopic_map",
]
