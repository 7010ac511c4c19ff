"""Run configuration: JSON in, validated value objects out.

Every key is optional; omitted keys take the documented defaults, unknown keys
are rejected, and validation errors name the offending field path
(``drive.frequency``). Pressures are given in mbar unless the section's
``pressure_unit`` is ``"Pa"``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

from rotorlock.dynamics import IntegratorSettings, RotorState
from rotorlock.limitcycle import DEFAULT_ENSEMBLE, ParameterPath
from rotorlock.params import (
    MBAR,
    DriveConfig,
    GasEnvironment,
    GeometricFactors,
    LaserField,
    Nanorod,
    coefficients,
)
from rotorlock.sensing import ChainSettings
from rotorlock.signal import NoiseSpec


class ConfigError(ValueError):
    pass


PRESSURE_UNITS = {"mbar": MBAR, "Pa": 1.0}


@dataclass(frozen=True)
class GasSection:
    pressure: float = 4.0
    pressure_unit: str = "mbar"
    temperature: float = 300.0
    particle_mass: float = 4.8e-26

    def build(self) -> GasEnvironment:
        if self.pressure_unit not in PRESSURE_UNITS:
            raise ValueError(f"gas.pressure_unit must be one of {sorted(PRESSURE_UNITS)}")
        return GasEnvironment(
            self.pressure * PRESSURE_UNITS[self.pressure_unit], self.temperature, self.particle_mass
        )


@dataclass(frozen=True)
class InitialSection:
    """Starting state: alpha in rad, omega as a fraction of 2 pi f_d."""

    alpha: float = 0.0
    omega_fraction: float = 0.5

    def build(self, drive: DriveConfig) -> RotorState:
        return RotorState(self.alpha, 2.0 * math.pi * drive.frequency * self.omega_fraction, 0.0)


@dataclass(frozen=True)
class NoiseSection:
    power_rms: float = 0.003
    flicker_rms: float = 0.0
    flicker_band: tuple = (1.0, 1e4)
    additive_rms: float = 0.0

    def build(self, seed: int) -> NoiseSpec:
        return NoiseSpec(self.power_rms, self.flicker_rms, tuple(self.flicker_band), self.additive_rms, seed)


@dataclass(frozen=True)
class SimulateSection:
    periods: int = 5000
    analysis_periods: int = 1000


@dataclass(frozen=True)
class MapSection:
    """Grid axes as [first, last, count]; nv_ratio null means the rod's N/V."""

    gamma: tuple = (0.005, 0.1, 50)
    torque: tuple = (0.005, 0.7, 50)
    nv_ratio: float | None = None
    ensemble: tuple = DEFAULT_ENSEMBLE
    steps_per_half_period: int = 32
    transient_periods: int = 2000


@dataclass(frozen=True)
class PathSection:
    """Parameter path (see :class:`rotorlock.limitcycle.ParameterPath`).

    ``reference_torque`` fixes N/I for dimensionless paths (default: the
    first waypoint's torque, so f_d = 1 there); ``nv_ratio`` null means the
    rod's N/V.
    """

    waypoints: tuple | None = None
    space: str = "dimensionless"
    dwell_periods: int | tuple = 3000  # or one value per segment
    ramp_periods: int | tuple = 1000
    points_per_segment: int = 15
    preparation_periods: int = 8000
    labels: tuple | None = None
    nv_ratio: float | None = None
    reference_torque: float | None = None
    omega_fraction: float = 0.5
    steps_per_half_period: int = 40


@dataclass(frozen=True)
class AnalyzeSection:
    """Trace analysis; without ``trace`` a locked detector record of
    ``periods`` drive periods is synthesized from the configured rotor."""

    trace: str | None = None
    periods: int = 10000
    window: str = "hann"
    segments: int = 1
    fit_half_width_bins: int = 20
    carrier: float | None = None
    noise: bool = True


@dataclass(frozen=True)
class SenseSection:
    """``drive_frequency`` is used by the pressure loop; torque mode uses
    ``drive.frequency``. ``dphi`` and ``phi`` null mean: derive from power
    noise and the analytic operating point."""

    mode: str = "pressure"
    pressures: tuple = (2.0, 2.5, 3.0, 3.5, 4.0)
    pressure_unit: str = "mbar"
    drive_frequency: float = 2e6
    dphi: float | None = None
    phi: float | None = None
    realizations: int = 0
    calibration_file: str | None = None  # CSV: pressure_pa, phase_rad[, sigma_rad]


SECTIONS = {
    "rod": Nanorod,
    "gas": GasSection,
    "laser": LaserField,
    "drive": DriveConfig,
    "geometry": GeometricFactors,
    "integrator": IntegratorSettings,
    "initial": InitialSection,
    "noise": NoiseSection,
    "chain": ChainSettings,
    "simulate": SimulateSection,
    "map": MapSection,
    "path": PathSection,
    "analyze": AnalyzeSection,
    "sense": SenseSection,
}
PER_SEGMENT = {("path", "dwell_periods"), ("path", "ramp_periods")}
TOP_LEVEL = {"seed": 0, "output_dir": "rotorlock-out", "jobs": None}


@dataclass(frozen=True)
class RunConfig:
    rod: Nanorod = Nanorod()
    gas: GasSection = GasSection()
    laser: LaserField = LaserField()
    drive: DriveConfig = DriveConfig()
    geometry: GeometricFactors = GeometricFactors()
    integrator: IntegratorSettings = IntegratorSettings()
    initial: InitialSection = InitialSection()
    noise: NoiseSection = NoiseSection()
    chain: ChainSettings = ChainSettings()
    simulate: SimulateSection = SimulateSection()
    map: MapSection = MapSection()
    path: PathSection = PathSection()
    analyze: AnalyzeSection = AnalyzeSection()
    sense: SenseSection = SenseSection()
    seed: int = 0
    output_dir: str = "rotorlock-out"
    jobs: int | None = None

    @property
    def gas_env(self) -> GasEnvironment:
        return self.gas.build()

    @property
    def coefficients(self):
        return coefficients(self.rod, self.gas_env, self.laser, self.geometry)

    @property
    def nv_ratio(self) -> float:
        c = self.coefficients
        if c.potential == 0:
            raise ConfigError("rod and laser give no alignment potential, N/V is undefined")
        return c.torque / c.potential

    def initial_state(self) -> RotorState:
        return self.initial.build(self.drive)

    def noise_spec(self) -> NoiseSpec:
        return self.noise.build(self.seed)

    def to_dict(self, execution: bool = True) -> dict:
        """Resolved configuration; ``execution=False`` leaves out output_dir
        and jobs, which do not affect results."""
        out = {}
        for name in SECTIONS:
            out[name] = _plain(asdict(getattr(self, name)))
        out["seed"] = self.seed
        if execution:
            out["output_dir"] = self.output_dir
            out["jobs"] = self.jobs
        return out


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _check_value(path: str, default, value):
    if value is None:
        if default is None:
            return None
        raise ConfigError(f"{path}: missing value")
    if default is None:
        return tuple(_listify(value)) if isinstance(value, list) else value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{path}: must be finite")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(_listify(value))
    return value


def _listify(seq):
    return [tuple(_listify(v)) if isinstance(v, list) else v for v in seq]


def _build_section(name: str, cls, data) -> object:
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {', '.join(name + '.' + k for k in unknown)}")
    defaults = cls()
    kwargs = {}
    for key, val in data.items():
        path = f"{name}.{key}"
        if (name, key) in PER_SEGMENT and isinstance(val, list):
            kwargs[key] = tuple(_check_value(f"{path}[{i}]", 0, v) for i, v in enumerate(val))
        else:
            kwargs[key] = _check_value(path, getattr(defaults, key), val)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(name) else f"{name}: {msg}") from exc


def load_config(data: dict | None = None) -> RunConfig:
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(data) - set(SECTIONS) - set(TOP_LEVEL))
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, cls in SECTIONS.items():
        if name in data:
            kwargs[name] = _build_section(name, cls, data[name])
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    kwargs["seed"] = seed
    out_dir = data.get("output_dir", TOP_LEVEL["output_dir"])
    if not isinstance(out_dir, str):
        raise ConfigError("output_dir: expected a string")
    kwargs["output_dir"] = out_dir
    jobs = data.get("jobs")
    if jobs is not None and (isinstance(jobs, bool) or not isinstance(jobs, int) or jobs < 1):
        raise ConfigError(f"jobs: expected a positive integer, got {jobs!r}")
    kwargs["jobs"] = jobs
    cfg = RunConfig(**kwargs)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    try:
        cfg.gas.build()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for axis in ("gamma", "torque"):
        spec = getattr(cfg.map, axis)
        if len(spec) != 3:
            raise ConfigError(f"map.{axis}: expected [first, last, count]")
        lo, hi, n = spec
        if int(n) != n or n < 1:
            raise ConfigError(f"map.{axis}: grid needs at least one cell, got count {n!r}")
        if not (lo > 0 and hi >= lo) or (n > 1 and hi == lo):
            raise ConfigError(f"map.{axis}: need 0 < first < last")
    for e in cfg.map.ensemble:
        if len(e) != 2:
            raise ConfigError("map.ensemble: entries must be [alpha, omega_fraction]")
    if cfg.map.nv_ratio is not None and not cfg.map.nv_ratio > 0:
        raise ConfigError("map.nv_ratio must be positive")
    if cfg.map.steps_per_half_period < 16:
        raise ConfigError("map.steps_per_half_period must be >= 16")
    if cfg.path.steps_per_half_period < 16:
        raise ConfigError("path.steps_per_half_period must be >= 16")
    if cfg.simulate.periods < 1:
        raise ConfigError("simulate.periods must be >= 1")
    if not 1 <= cfg.simulate.analysis_periods:
        raise ConfigError("simulate.analysis_periods must be >= 1")
    if cfg.analyze.window not in ("hann", "rectangular"):
        raise ConfigError("analyze.window must be 'hann' or 'rectangular'")
    if cfg.analyze.segments < 1:
        raise ConfigError("analyze.segments must be >= 1")
    if cfg.sense.mode not in ("pressure", "torque"):
        raise ConfigError("sense.mode must be 'pressure' or 'torque'")
    if cfg.sense.pressure_unit not in PRESSURE_UNITS:
        raise ConfigError(f"sense.pressure_unit must be one of {sorted(PRESSURE_UNITS)}")
    if cfg.sense.mode == "pressure" and len(cfg.sense.pressures) < 3:
        raise ConfigError("sense.pressures: at least 3 pressures are needed")
    if any(not (isinstance(p, (int, float)) and p > 0) for p in cfg.sense.pressures):
        raise ConfigError("sense.pressures must be positive numbers")
    if cfg.analyze.periods < 2:
        raise ConfigError("analyze.periods must be >= 2")
    if cfg.sense.realizations < 0 or cfg.sense.realizations == 1:
        raise ConfigError("sense.realizations must be 0 (quasi-static) or >= 2")
    if not cfg.sense.drive_frequency > 0:
        raise ConfigError("sense.drive_frequency must be positive")
    if cfg.path.waypoints is not None:
        build_path(cfg)


def build_path(cfg: RunConfig) -> ParameterPath:
    p = cfg.path
    if p.waypoints is None:
        raise ConfigError("path.waypoints: missing value (give waypoints, --path-file or a preset)")
    try:
        return ParameterPath(
            waypoints=p.waypoints,
            space=p.space,
            dwell_periods=p.dwell_periods,
            ramp_periods=p.ramp_periods,
            points_per_segment=p.points_per_segment,
            preparation_periods=p.preparation_periods,
            labels=p.labels,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def preset_names() -> list[str]:
    root = resources.files("rotorlock") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    root = resources.files("rotorlock") / "presets"
    f = root / f"{name}.json"
    if not f.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return json.loads(f.read_text())


def read_config_file(path) -> dict:
    """JSON configuration, or the configuration echoed in an output header."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    if text.startswith("#"):
        for line in text.splitlines():
            if line.startswith("# config: "):
                return json.loads(line[len("# config: ") :])
            if not line.startswith("#"):
                break
        raise ConfigError(f"{path}: no configuration line in header")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(data, dict) and "provenance" in data and "config" in data["provenance"]:
        return data["provenance"]["config"]
    return data


def set_path(data: dict, dotted: str, value) -> dict:
    """Return a copy of ``data`` with ``dotted`` (e.g. ``drive.frequency``) set."""
    out = json.loads(json.dumps(data))
    keys = dotted.split(".")
    node = out
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: {k} is not a section")
    node[keys[-1]] = value
    return out


def parse_assignment(text: str):
    if "=" not in text:
        raise ConfigError(f"--set expects key.path=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


__all__ = [
    "ConfigError",
    "RunConfig",
    "load_config",
    "read_config_file",
    "build_path",
    "load_preset",
    "preset_names",
    "set_path",
    "parse_assignment",
]
