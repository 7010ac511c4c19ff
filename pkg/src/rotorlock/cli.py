"""Command-line entry point.

    rotorlock <command> [--preset NAME] [--config FILE] [--set key=value ...]
                        [--seed N] [--jobs N] [--out-dir DIR] [command options]

Configuration is merged in this order: preset, config file, ``--set``
assignments, then dedicated flags. The resolved configuration and seed are
echoed in every output header; ``--config`` also accepts such an output file,
which reruns the command bit-identically.

Exit codes: 0 success, 2 configuration or input error, 3 runtime error
(simulation failure or an operating point outside the model).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from rotorlock import __version__, io
from rotorlock import signal as sig
from rotorlock.config import (
    ConfigError,
    RunConfig,
    build_path,
    load_config,
    load_preset,
    parse_assignment,
    preset_names,
    read_config_file,
    set_path,
)
from rotorlock.dynamics import RotorState, SimulationError, simulate
from rotorlock.limitcycle import (
    PathModel,
    classify,
    collapse_kinds,
    lock_argument,
    locked_state_guess,
    map_region,
    phase_lag_analytic,
    sweep_path,
)
from rotorlock.params import Coefficients, coefficients, damping_per_pascal, dimensionless
from rotorlock.sensing import (
    OutOfModelError,
    calibrate_pressure,
    lockin_phase_lag,
    power_noise_phase_rms,
    power_noise_pressure_resolution,
    pressure_from_phase,
    torque_sensitivity,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class InputError(ValueError):
    """Unusable input data (exit code 2)."""


# ---------------------------------------------------------------- helpers


def _header(command: str, cfg: RunConfig) -> list[str]:
    return io.provenance(command, cfg.to_dict(execution=False), cfg.seed)


def _header_dict(command: str, cfg: RunConfig) -> dict:
    return {"rotorlock": __version__, "command": command, "seed": cfg.seed, "config": cfg.to_dict(False)}


def _out(cfg: RunConfig, name: str) -> Path:
    d = Path(cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _say(msg: str):
    print(msg, flush=True)


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: RunConfig) -> dict:
    """Trajectory files plus the limit-cycle report reached after the record."""
    coeffs, drive = cfg.coefficients, cfg.drive
    traj = simulate(cfg.initial_state(), coeffs, drive, cfg.integrator, cfg.simulate.periods)
    report = classify(
        coeffs, drive, traj.final_state, cfg.integrator, analysis_periods=cfg.simulate.analysis_periods
    )
    g, n, v = dimensionless(coeffs, drive)
    head = _header("simulate", cfg)
    files = [
        io.write_trajectory_csv(_out(cfg, "trajectory.csv"), traj, head),
        io.write_trajectory_binary(_out(cfg, "trajectory.bin"), traj, _header_dict("simulate", cfg)),
    ]
    body = {
        "report": report.as_dict(),
        "record_periods": cfg.simulate.periods,
        "coefficients": coeffs.as_dict(),
        "dimensionless": {"gamma": g, "torque": n, "potential": v},
        "lock_argument": _lock_argument(coeffs, drive),
        "phase_lag_analytic": _phase(coeffs, drive),
    }
    files.append(io.write_json(_out(cfg, "report.json"), body, _header_dict("simulate", cfg)))
    _say(f"{report.kind}: f_r = {report.f_r:.9g} Hz (f_r/f_d = {report.ratio:.9g})")
    return {"files": files, **body}


def _lock_argument(coeffs: Coefficients, drive):
    return lock_argument(coeffs, drive) if coeffs.potential > 0 else None


def _phase(coeffs: Coefficients, drive):
    return phase_lag_analytic(coeffs, drive) if coeffs.potential > 0 else None


def _axis(spec) -> np.ndarray:
    lo, hi, n = spec
    return np.linspace(lo, hi, int(n))


def cmd_map(cfg: RunConfig) -> dict:
    m = cfg.map
    nv = m.nv_ratio if m.nv_ratio is not None else cfg.nv_ratio
    settings = replace(
        cfg.integrator, steps_per_half_period=m.steps_per_half_period, transient_periods=m.transient_periods
    )
    region = map_region(
        _axis(m.gamma), _axis(m.torque), nv, m.ensemble, settings, cfg.drive.duty, cfg.jobs
    )
    rows = []
    for i, g in enumerate(region.gamma):
        for j, n in enumerate(region.torque):
            for k, (a0, w0) in enumerate(region.ensemble):
                rows.append(
                    [
                        float(g),
                        float(n),
                        int(region.lockable[i, j]),
                        float(region.phase[i, j]),
                        k,
                        a0,
                        w0,
                        str(region.kinds[i, j, k]),
                        float(region.ratios[i, j, k]),
                    ]
                )
    cols = [
        "gamma",
        "torque",
        "lockable",
        "phi_analytic_rad",
        "member",
        "alpha0_rad",
        "omega0_over_2pi_fd",
        "kind",
        "fr_over_fd",
    ]
    files = [io.write_csv(_out(cfg, "map.csv"), cols, rows, _header("map", cfg))]
    summary = region.summary()
    files.append(io.write_json(_out(cfg, "map.json"), {"summary": summary}, _header_dict("map", cfg)))
    _say(
        f"{summary['shape'][0]}x{summary['shape'][1]} cells, "
        f"{summary['lockable_cells']} lockable, {len(summary['false_lock_cells'])} false 1:2 locks"
    )
    return {"files": files, "summary": summary, "region": region}


def cmd_path(cfg: RunConfig) -> dict:
    path = build_path(cfg)
    p = cfg.path
    if path.space == "dimensionless":
        nv = p.nv_ratio if p.nv_ratio is not None else cfg.nv_ratio
        n_ref = p.reference_torque if p.reference_torque is not None else path.waypoints[0][1]
        model = PathModel.dimensionless(nv, n_ref, duty=cfg.drive.duty)
    else:
        model = PathModel.physical(
            cfg.coefficients, damping_per_pascal(cfg.rod, cfg.gas_env), cfg.drive.duty
        )
    _, d0 = model.point(path.space, *path.waypoints[0])
    initial = RotorState(cfg.initial.alpha, 2.0 * math.pi * d0.frequency * p.omega_fraction, 0.0)
    settings = replace(cfg.integrator, steps_per_half_period=p.steps_per_half_period)
    points = sweep_path(path, model, initial, settings)
    rows = []
    for pt in points:
        r = pt.report
        thr = r.threshold_frequency / r.f_d if r.threshold_frequency is not None else math.nan
        rows.append(
            [
                pt.segment,
                pt.index,
                pt.coords[0],
                pt.coords[1],
                pt.gamma,
                pt.torque,
                pt.lock_argument,
                r.kind,
                r.ratio,
                thr,
                r.f_r,
                r.residual,
            ]
        )
    cols = [
        "segment",
        "index",
        "coord_a",
        "coord_b",
        "gamma",
        "torque",
        "lock_argument",
        "kind",
        "fr_over_fd",
        "threshold_over_fd",
        "fr_hz",
        "residual",
    ]
    files = [io.write_csv(_out(cfg, "path.csv"), cols, rows, _header("path", cfg))]
    seq = collapse_kinds(points)
    body = {"sequence": seq, "points": [pt.as_dict() for pt in points]}
    files.append(io.write_json(_out(cfg, "path.json"), body, _header_dict("path", cfg)))
    _say(" -> ".join(seq))
    return {"files": files, "sequence": seq, "points": points}


def _load_trace(cfg: RunConfig) -> sig.SignalTrace:
    try:
        header, t, x = io.read_trace_csv(cfg.analyze.trace)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read trace {cfg.analyze.trace}: {exc}") from exc
    dt = np.diff(t)
    if not np.all(dt > 0) or np.ptp(dt) > 1e-6 * np.mean(dt):
        raise InputError(f"trace {cfg.analyze.trace} is not uniformly sampled")
    fs = 1.0 / float(np.mean(dt))
    return sig.SignalTrace(x, fs, cfg.analyze.carrier, float(t[0]), {"source": str(cfg.analyze.trace)})


def _synth_trace(cfg: RunConfig) -> sig.SignalTrace:
    coeffs, drive = cfg.coefficients, cfg.drive
    spp = cfg.chain.samples_per_period
    steps = 2 * cfg.integrator.steps_per_half_period
    if steps % spp:
        raise ConfigError("chain.samples_per_period must divide 2 * integrator.steps_per_half_period")
    start = locked_state_guess(coeffs, drive) if coeffs.potential > 0 else cfg.initial_state()
    rep = classify(coeffs, drive, start, cfg.integrator)
    if not rep.locked:
        raise OutOfModelError(f"configured rotor is not locked ({rep.kind}); nothing to synthesize")
    block = abs(rep.q)
    st = replace(cfg.integrator, stride=steps // spp)
    traj = simulate(rep.final_state, coeffs, drive, st, 2 * block)
    cycle = sig.LockedCycle.from_trajectory(traj, block)
    noise = cfg.noise_spec() if cfg.analyze.noise else sig.NOISELESS
    src = sig.CycleSource(
        cycle, cfg.analyze.periods * spp, cfg.chain.detector_angle, noise, carrier=drive.frequency
    )
    return src.to_trace()


def cmd_analyze(cfg: RunConfig) -> dict:
    a = cfg.analyze
    trace = _load_trace(cfg) if a.trace is not None else _synth_trace(cfg)
    try:
        spec = sig.psd(trace, a.window, a.segments)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if spec.psd.size < 2 * a.fit_half_width_bins + 1:
        raise InputError(
            f"trace of {len(trace)} samples gives {spec.psd.size} bins per segment; "
            f"at least {2 * a.fit_half_width_bins + 1} are needed"
        )
    carrier = a.carrier if a.carrier is not None else trace.carrier
    if carrier is not None and not 0 < carrier < 0.5 * trace.sample_rate:
        carrier = None
    head = _header("analyze", cfg)
    files = [
        io.write_csv(
            _out(cfg, "spectrum.csv"),
            ["frequency_hz", "psd_per_hz"],
            np.column_stack((spec.frequency, spec.psd)),
            head,
        )
    ]
    body = {
        "samples": len(trace),
        "sample_rate_hz": trace.sample_rate,
        "rbw_hz": spec.rbw,
        "enbw_hz": spec.enbw,
        "window": spec.window,
        "segments": spec.segments,
    }
    try:
        fit = sig.fit_lorentzian(spec, carrier, a.fit_half_width_bins * spec.rbw)
        body["fit"] = {"converged": True, **fit.as_dict()}
        _say(
            f"peak {fit.center:.9g} Hz, FWHM {fit.fwhm:.3g} Hz "
            f"({'upper bound, resolution limited' if fit.resolution_limited else 'resolved'})"
        )
        carrier = fit.center if carrier is None else carrier
    except sig.FitError as exc:
        body["fit"] = {"converged": False, "error": str(exc), "residual": exc.residual}
        _say(f"no Lorentzian fit: {exc}")
    if carrier is not None and spec.psd[spec.bin_of(carrier)] > 0:
        curve = sig.phase_noise(spec, carrier)
        body["carrier_hz"] = curve.carrier
        files.append(
            io.write_csv(
                _out(cfg, "phase_noise.csv"),
                ["offset_hz", "dbc_per_hz"],
                np.column_stack((curve.offset, curve.level)),
                head,
            )
        )
    files.append(io.write_json(_out(cfg, "analysis.json"), body, _header_dict("analyze", cfg)))
    return {"files": files, **body}


def cmd_sense(cfg: RunConfig) -> dict:
    if cfg.sense.mode == "pressure":
        return _sense_pressure(cfg)
    return _sense_torque(cfg)


def _sense_pressure(cfg: RunConfig) -> dict:
    s = cfg.sense
    if s.calibration_file is not None:
        return _sense_calibration_file(cfg)
    drive = replace(cfg.drive, frequency=s.drive_frequency)
    unit = {"mbar": 100.0, "Pa": 1.0}[s.pressure_unit]
    pressures = [float(p) * unit for p in s.pressures]
    rows, phases = [], []
    for p in pressures:
        gas = cfg.gas_env.with_pressure(p)
        coeffs = coefficients(cfg.rod, gas, cfg.laser, cfg.geometry)
        phi_a = phase_lag_analytic(coeffs, drive)
        if phi_a is None:
            raise OutOfModelError(
                f"{p / unit:g} {s.pressure_unit} at f_d = {drive.frequency:g} Hz is outside the lockable "
                f"region (lock argument {lock_argument(coeffs, drive):.4g})"
            )
        phi, rep = lockin_phase_lag(coeffs, drive, cfg.integrator, cfg.chain, sig.NOISELESS)
        inferred = pressure_from_phase(phi, cfg.rod, gas, cfg.laser, drive, cfg.geometry)
        phases.append(phi)
        rows.append([p, phi, rep.phase_lag, phi_a, inferred, inferred / p - 1.0])
    cal = calibrate_pressure(pressures, phases)
    centre = cfg.gas_env.with_pressure(float(np.mean(pressures)))
    res = power_noise_pressure_resolution(
        cfg.rod,
        centre,
        cfg.laser,
        drive,
        cfg.geometry,
        cfg.noise.power_rms,
        s.realizations,
        cfg.seed,
        cfg.integrator,
    )
    cols = [
        "pressure_pa",
        "phase_lockin_rad",
        "phase_trajectory_rad",
        "phase_analytic_rad",
        "inferred_pressure_pa",
        "relative_error",
    ]
    files = [io.write_csv(_out(cfg, "pressure.csv"), cols, rows, _header("sense", cfg))]
    body = {
        "mode": "pressure",
        "drive_frequency_hz": drive.frequency,
        "calibration": cal.as_dict(),
        "max_relative_error": max(abs(r[-1]) for r in rows),
        "resolution": {
            "relative": res.relative,
            "phase_rms_rad": res.phase_rms,
            "method": res.method,
            "power_rms": cfg.noise.power_rms,
            "pressure_pa": centre.pressure,
        },
    }
    files.append(io.write_json(_out(cfg, "calibration.json"), body, _header_dict("sense", cfg)))
    _say(
        f"slope {cal.slope:.4g} rad/Pa, max inversion error {body['max_relative_error']:.2%}, "
        f"resolution {res.relative:.2%} ({res.method})"
    )
    return {"files": files, **body}


def _sense_calibration_file(cfg: RunConfig) -> dict:
    path = cfg.sense.calibration_file
    try:
        _, data = io.read_csv(path)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read calibration file {path}: {exc}") from exc
    if data.shape[1] not in (2, 3):
        raise InputError(f"{path}: expected columns pressure_pa, phase_rad[, sigma_rad]")
    sigma = data[:, 2] if data.shape[1] == 3 else None
    try:
        cal = calibrate_pressure(data[:, 0], data[:, 1], sigma=sigma)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    body = {"mode": "pressure", "source": str(path), "calibration": cal.as_dict()}
    files = [io.write_json(_out(cfg, "calibration.json"), body, _header_dict("sense", cfg))]
    _say(f"slope {cal.slope:.4g} rad/Pa, max residual {cal.max_residual:.3g} rad, linear: {cal.linear}")
    return {"files": files, **body}


def _sense_torque(cfg: RunConfig) -> dict:
    s = cfg.sense
    coeffs, drive = cfg.coefficients, cfg.drive
    phi = s.phi
    if phi is None:
        phi = phase_lag_analytic(coeffs, drive)
        if phi is None:
            raise OutOfModelError(
                f"operating point is outside the lockable region (lock argument {lock_argument(coeffs, drive):.4g})"
            )
    dphi = s.dphi if s.dphi is not None else power_noise_phase_rms(coeffs, drive, cfg.noise.power_rms)
    bw = 1.0 / (2.0 * math.pi * cfg.chain.time_constant)
    rep = torque_sensitivity(coeffs, drive, dphi, bw, phi)
    body = {
        "mode": "torque",
        "sensitivity": rep.as_dict(),
        "closed_form_half_pi": 2.0 * coeffs.potential / math.pi * dphi,
        "dphi_source": "configured" if s.dphi is not None else "power noise",
    }
    files = [io.write_json(_out(cfg, "torque.json"), body, _header_dict("sense", cfg))]
    _say(f"dN = {rep.torque:.3g} N m, external dN = {rep.external_torque:.3g} N m at phi = {phi:.4f} rad")
    return {"files": files, **body}


COMMANDS = {
    "simulate": cmd_simulate,
    "map": cmd_map,
    "path": cmd_path,
    "analyze": cmd_analyze,
    "sense": cmd_sense,
}


# ---------------------------------------------------------------- parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", help=f"packaged configuration ({', '.join(preset_names())})")
    common.add_argument("--config", help="JSON configuration or a rotorlock output file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one value, e.g. drive.frequency=2e6 (JSON values)")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker processes (default: all available)")
    common.add_argument("--out-dir", help="output directory")

    parser = argparse.ArgumentParser(
        prog="rotorlock",
        description="Driven levitated nanorod: simulation, locking maps, signal analysis and sensing.",
        epilog="Exit codes: 0 success, 2 configuration or input error, 3 runtime error.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="integrate and classify one operating point")
    p.add_argument("--periods", type=int, help="recorded drive periods (simulate.periods)")

    p = sub.add_parser("map", parents=[common], help="locking map over (Gamma/f_d, N/I f_d^2)")
    p.add_argument("--grid", help="cells per axis, 'N' or 'NGxNT'")

    p = sub.add_parser("path", parents=[common], help="sweep along a parameter path")
    p.add_argument("--path-file", help="JSON path description (merged into the path section)")

    p = sub.add_parser("analyze", parents=[common], help="spectrum, Lorentzian fit and phase noise")
    p.add_argument("--trace", help="CSV trace with columns t, value")
    p.add_argument("--window", choices=["hann", "rectangular"])
    p.add_argument("--segments", type=int)

    p = sub.add_parser("sense", parents=[common], help="pressure calibration or torque sensitivity")
    p.add_argument("--mode", choices=["pressure", "torque"])
    p.add_argument("--pressures", type=float, nargs="+", help="in sense.pressure_unit")
    p.add_argument("--phi", type=float, help="operating phase lag for torque mode (rad)")
    p.add_argument("--dphi", type=float, help="phase resolution for torque mode (rad)")
    p.add_argument("--drive-frequency", type=float, help="drive frequency of the pressure loop (Hz)")
    p.add_argument("--calibration", help="CSV of measured pressure_pa, phase_rad[, sigma_rad] to fit")
    return parser


def _grid(text: str) -> tuple[int, int]:
    try:
        parts = [int(v) for v in text.lower().split("x")]
    except ValueError as exc:
        raise ConfigError(f"--grid: expected 'N' or 'NGxNT', got {text!r}") from exc
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2:
        raise ConfigError(f"--grid: expected 'N' or 'NGxNT', got {text!r}")
    return parts[0], parts[1]


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.preset:
        data = load_preset(args.preset)
    if args.config:
        data = _deep_merge(data, read_config_file(args.config))
    for item in args.set:
        key, value = parse_assignment(item)
        data = set_path(data, key, value)
    flags = {"seed": args.seed, "jobs": args.jobs, "output_dir": args.out_dir}
    for key, value in flags.items():
        if value is not None:
            data[key] = value
    cmd = args.command
    if cmd == "simulate" and args.periods is not None:
        data = set_path(data, "simulate.periods", args.periods)
    if cmd == "map" and args.grid:
        ng, nt = _grid(args.grid)
        base = load_config(data).map
        data = set_path(data, "map.gamma", [base.gamma[0], base.gamma[1], ng])
        data = set_path(data, "map.torque", [base.torque[0], base.torque[1], nt])
    if cmd == "path" and args.path_file:
        try:
            extra = json.loads(Path(args.path_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read path file {args.path_file}: {exc}") from exc
        if not isinstance(extra, dict):
            raise ConfigError(f"{args.path_file}: expected a JSON object")
        data = _deep_merge(data, {"path": extra.get("path", extra)})
    if cmd == "analyze":
        for key in ("trace", "window", "segments"):
            if getattr(args, key) is not None:
                data = set_path(data, f"analyze.{key}", getattr(args, key))
    if cmd == "sense":
        for key, attr in (("mode", "mode"), ("pressures", "pressures"), ("phi", "phi"),
                          ("dphi", "dphi"), ("drive_frequency", "drive_frequency"),
                          ("calibration_file", "calibration")):
            if getattr(args, attr) is not None:
                data = set_path(data, f"sense.{key}", getattr(args, attr))
    return load_config(data)


def _deep_merge(base: dict, extra: dict) -> dict:
    if not isinstance(extra, dict):
        raise ConfigError("configuration must be a JSON object")
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def run(argv=None) -> tuple[int, dict | None]:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        result = COMMANDS[args.command](cfg)
    except (ConfigError, InputError) as exc:
        print(f"rotorlock {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, None
    except (OutOfModelError, SimulationError, sig.FitError, ValueError) as exc:
        print(f"rotorlock {args.command}: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME, None
    return EXIT_OK, result


def main(argv=None) -> int:
    return run(argv)[0]


if __name__ == "__main__":
    sys.exit(main())
