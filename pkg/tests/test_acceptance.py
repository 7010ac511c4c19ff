"""End-to-end acceptance criteria; each test records one PASS/FAIL line."""

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import point, torque_for_argument, unit_drive
from rotorlock import io
from rotorlock import signal as sig
from rotorlock.cli import EXIT_OK, cmd_map, cmd_path, run
from rotorlock.config import load_config, load_preset, set_path
from rotorlock.dynamics import LINEAR, IntegratorSettings, RotorState, simulate, step_segment
from rotorlock.limitcycle import classify, locked_state_guess, phase_lag_analytic, phase_offset
from rotorlock.params import (
    MBAR,
    Coefficients,
    DriveConfig,
    GasEnvironment,
    LaserField,
    Nanorod,
    coefficients,
    scaled_coefficients,
)
from rotorlock.sensing import (
    ChainSettings,
    lockin_phase_lag,
    phase_torque_derivative,
    power_noise_phase_rms,
    power_noise_pressure_resolution,
    pressure_from_phase,
    torque_sensitivity,
)

ROD, GAS, LASER = Nanorod(), GasEnvironment(), LaserField()
REF_DRIVE = DriveConfig(1.11e6)
SENSE_DRIVE = DriveConfig(2e6)
SPP = 16


def literal_phase(c: Coefficients, d: DriveConfig):
    """arccos[(pi/2V)(N - 2 pi f_d I Gamma)], written out independently."""
    x = math.pi / (2 * c.potential) * (c.torque - 2 * math.pi * d.frequency * c.inertia * c.damping)
    return math.acos(x) if abs(x) <= 1 else None


# ------------------------------------------------------------ 1


def test_criterion_1_phase_lag_cross_validation(acceptance):
    d = unit_drive()
    worst, worst_at, unlocked = 0.0, None, []
    for g in np.linspace(0.005, 0.05, 10):
        for x in np.linspace(-0.9, 0.2, 10):
            c = point(float(g), torque_for_argument(float(g), float(x)))
            oracle = literal_phase(c, d)
            rep = classify(c, d, locked_state_guess(c, d))
            if rep.kind != "lock_1_2":
                unlocked.append((float(g), float(x), rep.kind))
                continue
            err = abs(rep.phase_lag - oracle)
            if err > worst:
                worst, worst_at = err, (round(float(g), 4), round(float(x), 3))
    ok = not unlocked and worst < 0.01 * math.pi
    acceptance("1", ok, f"max |dphi| = {worst / math.pi:.4f} pi at (gamma, x) = {worst_at}; unlocked {len(unlocked)}/100")
    assert not unlocked, unlocked
    assert worst < 0.01 * math.pi


# ------------------------------------------------------------ 2 and 4


def _preset_path(tmp_path_factory, ramp_factor=1):
    data = load_preset("hysteresis_path")
    ramp = data["path"]["ramp_periods"] * ramp_factor
    data = set_path(data, "path.ramp_periods", ramp)
    data = set_path(data, "output_dir", str(tmp_path_factory.mktemp(f"path{ramp_factor}")))
    return cmd_path(load_config(data))


@pytest.fixture(scope="module")
def preset_sweep(tmp_path_factory):
    return _preset_path(tmp_path_factory)


def test_criterion_2_threshold_frequency_law(acceptance, preset_sweep):
    seg = [p for p in preset_sweep["points"] if p.segment == 1]
    errs = []
    for p in seg:
        oracle = p.torque / (4 * math.pi * p.gamma)  # N / (4 pi I Gamma) in units of f_d
        errs.append(abs(p.report.ratio / oracle - 1.0))
    worst = max(errs)
    ok = len(seg) > 0 and worst < 0.02
    acceptance("2", ok, f"{len(seg)} dwell points on segment 2-3, max |f_r / threshold - 1| = {worst:.4f}")
    assert len(seg) > 0
    assert worst < 0.02


EXPECTED_SEQUENCE = ["lock_1_2", "threshold", "lock_1_4", "threshold", "lock_1_2"]


def test_criterion_4_hysteresis_sequence(acceptance, preset_sweep, tmp_path_factory):
    base = preset_sweep["sequence"]
    refined = _preset_path(tmp_path_factory, 2)["sequence"]
    ok = base == EXPECTED_SEQUENCE and refined == base
    acceptance("4", ok, f"sequence {' -> '.join(base)}; 2x slower ramp gives {' -> '.join(refined)}")
    assert base == EXPECTED_SEQUENCE
    assert refined == base


# ------------------------------------------------------------ 3


@pytest.fixture(scope="module")
def default_map(tmp_path_factory):
    data = {"output_dir": str(tmp_path_factory.mktemp("map"))}
    return cmd_map(load_config(data))


def test_criterion_3a_no_false_locks(acceptance, default_map):
    s = default_map["summary"]
    region = default_map["region"]
    # the lockable mask must agree with the literal arccos domain
    d = unit_drive()
    mask = np.array(
        [[literal_phase(point(g, n, region.nv_ratio), d) is not None for n in region.torque] for g in region.gamma]
    )
    false = s["false_lock_cells"]
    ok = s["shape"] == [50, 50] and np.array_equal(mask, region.lockable) and false == []
    acceptance("3a", ok, f"{s['shape'][0]}x{s['shape'][1]} map, {s['lockable_cells']} lockable cells, {len(false)} false 1:2 locks")
    assert np.array_equal(mask, region.lockable)
    assert false == []


def test_criterion_3b_coincidence_line_locks_from_every_start(acceptance, default_map):
    s = default_map["summary"]
    region = default_map["region"]
    cells = region.coincidence_cells(0.5)
    misses = {}
    for i, j in cells:
        kinds = region.kinds[i, j]
        bad = [str(k) for k in kinds if k != "lock_1_2"]
        if bad:
            misses[(round(float(region.gamma[i]), 4), round(float(region.torque[j]), 4))] = bad
    ok = s["coincidence_1_2_cells"] > 0 and s["coincidence_1_2_all_locked"] == s["coincidence_1_2_cells"]
    acceptance(
        "3b",
        ok,
        f"{s['coincidence_1_2_all_locked']}/{s['coincidence_1_2_cells']} coincidence cells locked from all "
        f"{len(region.ensemble)} starts; misses {dict(list(misses.items())[:3])}",
    )
    assert s["coincidence_1_2_cells"] > 0
    assert s["coincidence_1_2_all_locked"] == s["coincidence_1_2_cells"], misses


# ------------------------------------------------------------ 5


def test_criterion_5_linewidth_is_resolution_limited(acceptance):
    c, d = point(0.03, 0.3), unit_drive()
    settings = IntegratorSettings()
    rep = classify(c, d, locked_state_guess(c, d), settings)
    assert rep.kind == "lock_1_2"
    st = replace(settings, stride=2 * settings.steps_per_half_period // SPP)
    ratios = {}
    for periods in (1000, 10000, 100000):
        traj = simulate(rep.final_state, c, d, st, periods)
        spec = sig.psd(sig.synthesize_detector(traj), "hann")
        fit = sig.fit_lorentzian(spec, d.frequency)
        assert abs(fit.center - d.frequency) < spec.rbw
        ratios[periods] = fit.fwhm / spec.rbw
    ok = all(r <= 1.2 for r in ratios.values())
    acceptance("5", ok, "FWHM / RBW: " + ", ".join(f"{k:g} periods {v:.3f}" for k, v in ratios.items()))
    assert ok, ratios


# ------------------------------------------------------------ 6


def test_criterion_6_phase_noise_definition(acceptance):
    fs, f0, amp, sigma, nper, segs = 2000.0, 190.0, 1.0, 0.01, 2000, 100
    t = np.arange(nper * segs) / fs
    x = amp * np.cos(2 * math.pi * f0 * t) + sigma * np.random.default_rng(5).standard_normal(t.size)
    spec = sig.psd(sig.SignalTrace(x, fs, f0), "hann", segments=segs)
    curve = sig.phase_noise(spec, f0)
    # oracle: one-sided white density 2 sigma^2 / fs against the on-bin Hann
    # carrier density (A^2 / 2) / ENBW with ENBW = 1.5 fs / nper
    w = np.hanning(nper + 1)[:-1]
    enbw = fs * np.sum(w**2) / np.sum(w) ** 2
    oracle = 10 * math.log10((2 * sigma**2 / fs) / (0.5 * amp**2 / enbw))
    far = curve.offset >= 5 * spec.rbw
    floor = 10 * math.log10(np.mean(10 ** (curve.level[far] / 10)))
    zero = curve.level[0]
    ok = zero == 0.0 and curve.offset[0] == 0.0 and abs(floor - oracle) < 1.0
    acceptance("6", ok, f"S_phi(0) = {zero} dBc/Hz; floor {floor:.2f} vs analytic {oracle:.2f} dBc/Hz over {segs} segments")
    assert zero == 0.0
    assert abs(floor - oracle) < 1.0
    assert sig.white_floor_dbc(sigma, fs, amp, spec.enbw) == pytest.approx(oracle, abs=1e-9)


# ------------------------------------------------------------ 7


def _locked_cycle(c: Coefficients, d: DriveConfig) -> sig.LockedCycle:
    settings = IntegratorSettings()
    rep = classify(c, d, locked_state_guess(c, d), settings)
    assert rep.kind == "lock_1_2"
    st = replace(settings, stride=2 * settings.steps_per_half_period // SPP)
    return sig.LockedCycle.from_trajectory(simulate(rep.final_state, c, d, st, 4))


def _programmed_phase(cycle: sig.LockedCycle, angle: float) -> float:
    """Phase of the synthesized detector fundamental, by direct projection
    over an integer number of drive periods."""
    trace = sig.CycleSource(cycle, 1000 * SPP, angle).to_trace()
    return sig.tone_phase(trace, cycle.drive_frequency)


def test_criterion_7a_chain_recovers_phase(acceptance):
    rng = np.random.default_rng(7)
    angles = rng.uniform(-math.pi / 2, math.pi / 2, 10)
    worst = wobble = 0.0
    for k, a in enumerate(angles):
        gas = GAS.with_pressure((3.0 + 0.2 * k) * MBAR)
        c = coefficients(ROD, gas, LASER)
        phi, rep = lockin_phase_lag(c, REF_DRIVE, chain=ChainSettings(detector_angle=float(a)))
        assert rep.kind == "lock_1_2"
        theta = _programmed_phase(_locked_cycle(c, REF_DRIVE), float(a))
        expected = abs(math.remainder(phase_offset(REF_DRIVE) - theta - 2 * a, 2 * math.pi))
        worst = max(worst, abs(phi - expected))
        wobble = max(wobble, abs(phi - rep.phase_lag))
    ok = worst < 1e-3
    acceptance(
        "7a",
        ok,
        f"max |phase_lockin - phase_programmed| = {worst:.2e} rad over 10 detector angles "
        f"(rotor phase lag differs by up to {wobble:.1e} rad through wobble harmonics)",
    )
    assert worst < 1e-3


def test_criterion_7b_chain_tracks_step(acceptance):
    c, d = coefficients(ROD, GAS, LASER), REF_DRIVE
    cycle = _locked_cycle(c, d)
    tau, record, beta = 0.1, 2.0, -0.05
    # rotating the detector by beta advances the tone phase by about -2 beta = 0.1 rad
    old, new = _programmed_phase(cycle, 0.0), _programmed_phase(cycle, beta)
    step = math.remainder(new - old, 2 * math.pi)
    t0 = cycle.start_time
    t_step = t0 + 1.0
    angle = lambda t: np.where(t >= t_step, beta, 0.0)  # noqa: E731
    src = sig.CycleSource(cycle, int(round(record * cycle.sample_rate)), angle)
    mixed = sig.mix_down(src, d.frequency - 190.0, 2000.0)
    out = sig.lockin_demodulate(mixed, 190.0, tau)
    a = math.exp(-1 / (tau * mixed.sample_rate))
    ripple = abs((1 - a) / (1 - a * np.exp(-4j * math.pi * 190.0 / mixed.sample_rate)))
    pre = (out.time >= t0 + 5 * tau) & (out.time < t_step)
    post = out.time >= t_step + 5 * tau
    err_pre = float(np.max(np.abs(np.angle(np.exp(1j * (out.phase[pre] - old))))))
    err_post = float(np.max(np.abs(np.angle(np.exp(1j * (out.phase[post] - new))))))
    bound = abs(step) * math.exp(-5) + 1.05 * ripple
    ok = abs(step - 0.1) < 1e-3 and err_pre <= 1.05 * ripple and err_post <= bound
    acceptance("7b", ok, f"{step:.4f} rad step: max error after 5 tau {err_post:.2e} rad (bound {bound:.2e})")
    assert abs(step - 0.1) < 1e-3
    assert err_pre <= 1.05 * ripple
    assert err_post <= bound



# ------------------------------------------------------------ 8


def test_criterion_8a_pressure_loop(acceptance):
    errs = []
    for p_mbar in (2.0, 2.5, 3.0, 3.5, 4.0):
        gas = GAS.with_pressure(p_mbar * MBAR)
        c = coefficients(ROD, gas, LASER)
        phi, rep = lockin_phase_lag(c, SENSE_DRIVE)
        assert rep.kind == "lock_1_2"
        errs.append(pressure_from_phase(phi, ROD, GAS, LASER, SENSE_DRIVE) / gas.pressure - 1.0)
    worst = max(abs(e) for e in errs)
    acceptance("8a", worst < 0.005, f"5 pressures 2-4 mbar at 2 MHz, max inversion error {worst:.3%}")
    assert worst < 0.005


def test_criterion_8b_power_noise_resolution(acceptance):
    gas = GAS.with_pressure(3.0 * MBAR)
    qs = power_noise_pressure_resolution(ROD, gas, LASER, SENSE_DRIVE, power_rms=0.003)
    mc = power_noise_pressure_resolution(
        ROD, gas, LASER, SENSE_DRIVE, power_rms=0.003, realizations=40, seed=3
    )
    # the Monte-Carlo spread of 40 samples is known to about 11% (1 sigma)
    agree = abs(mc.relative / qs.relative - 1.0) < 0.4
    ok = 0.001 <= qs.relative <= 0.009 and 0.001 <= mc.relative <= 0.009 and agree
    acceptance(
        "8b",
        ok,
        f"resolution {qs.relative:.3%} (quasi-static), {mc.relative:.3%} (Monte-Carlo, 40 runs) vs 0.3% target",
    )
    assert 0.001 <= qs.relative <= 0.009
    assert 0.001 <= mc.relative <= 0.009
    assert agree


# ------------------------------------------------------------ 9


def test_criterion_9_torque_sensitivity(acceptance):
    d = unit_drive()
    gamma, v = 0.02, 0.5
    n = 2 * math.pi * gamma  # phi = pi/2
    c = scaled_coefficients(gamma, n, v)
    assert phase_lag_analytic(c, d) == pytest.approx(math.pi / 2, abs=1e-12)
    h = 1e-4 * v
    fd = (literal_phase(scaled_coefficients(gamma, n + h, v), d) - literal_phase(scaled_coefficients(gamma, n - h, v), d)) / (2 * h)
    dphi = 1e-3
    closed = 2 * v / math.pi * dphi
    numeric = dphi / abs(fd)
    rel = abs(closed / numeric - 1.0)
    assert abs(phase_torque_derivative(c, d)) == pytest.approx(abs(fd), rel=1e-6)
    assert torque_sensitivity(c, d, dphi).torque == pytest.approx(closed, rel=1e-12)

    pc = coefficients(ROD, GAS, LASER)
    dphi_p = power_noise_phase_rms(pc, REF_DRIVE, 0.003)
    dn = torque_sensitivity(pc, REF_DRIVE, dphi_p).torque
    half_pi = 2 * pc.potential / math.pi * dphi_p
    target = 2.4e-22
    in_order = all(target / 10 <= val <= target * 10 for val in (dn, half_pi))
    ok = rel < 1e-6 and in_order
    acceptance(
        "9",
        ok,
        f"closed form vs finite difference {rel:.1e}; dN = {dn:.2e} N m at the operating phase, "
        f"{half_pi:.2e} N m at pi/2 (target 2.4e-22)",
    )
    assert rel < 1e-6
    assert in_order


# ------------------------------------------------------------ 10


def _reference_segment(c: Coefficients, state: RotorState, dt: float) -> np.ndarray:
    def rhs(_, y):
        return [y[1], -c.damping * y[1] - c.potential / c.inertia * math.sin(2 * y[0])]

    sol = solve_ivp(rhs, (0.0, dt), [state.alpha, state.omega], method="DOP853", rtol=1e-13, atol=1e-13)
    return sol.y[:, -1]


def _energy(s: RotorState, c: Coefficients) -> float:
    return 0.5 * c.inertia * s.omega**2 - 0.5 * c.potential * math.cos(2 * s.alpha)


def test_criterion_10_numerics(acceptance, tmp_path):
    # convergence order against an independent high-order reference;
    # 32 substeps per half period is the start of the asymptotic range
    c = Coefficients(0.3, 0.0, 50.0, 1.0)
    s0 = RotorState(1.0, 0.0)
    ref = _reference_segment(c, s0, 0.5)
    errs = []
    for n in (32, 64, 128, 256):
        s = step_segment(s0, c, LINEAR, 0.5, n)
        errs.append(abs(s.alpha - ref[0]) + abs(s.omega - ref[1]) / 10)
    order = min(math.log2(e0 / e1) for e0, e1 in zip(errs, errs[1:]))

    # energy in undamped linear-polarization segments at the reference point
    pc = coefficients(ROD, GAS, LASER)
    cons = Coefficients(0.0, pc.torque, pc.potential, pc.inertia)
    s = RotorState(0.4, math.pi * REF_DRIVE.frequency)
    e0 = abs(_energy(s, cons))
    drift = 0.0
    for _ in range(200):
        s2 = step_segment(s, cons, LINEAR, REF_DRIVE.period, 2 * IntegratorSettings().steps_per_half_period)
        drift = max(drift, abs(_energy(s2, cons) - _energy(s, cons)) / e0)
        s = s2

    # bit-identical reruns from the echoed configuration
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["simulate", "--periods", "400", "--out-dir", str(a)])[0] == EXIT_OK
    assert run(["simulate", "--config", str(a / "report.json"), "--out-dir", str(b)])[0] == EXIT_OK
    names = sorted(p.name for p in a.iterdir())
    identical = names == sorted(p.name for p in b.iterdir()) and all(
        (a / n).read_bytes() == (b / n).read_bytes() for n in names
    )
    _, data = io.read_csv(a / "trajectory.csv")
    ok = order >= 3.5 and drift < 1e-8 and identical and data.shape[0] > 1
    acceptance("10", ok, f"observed order {order:.2f}; energy drift {drift:.1e} per period; reruns identical: {identical}")
    assert order >= 3.5
    assert drift < 1e-8
    assert identical
