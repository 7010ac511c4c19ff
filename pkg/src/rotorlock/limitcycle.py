"""Limit-cycle classification, phase lag, region maps and adiabatic paths.

Locked rotation p:q (p rotations in q drive periods) is detected through two
independent tests on the stroboscopic samples: the mean frequency must be
quantized, |f_r q - f_d p| / f_d < 1e-6, and the samples taken every q periods
must have converged to a fixed point of (alpha mod pi, omega).

Period-averaging the equation of motion for a 1:2-locked rod,
alpha = alpha0 + pi f_d t + ripple, at duty D gives

    D N - pi f_d I Gamma = (V / pi) sin(pi D) sin(2 alpha0 + pi D)

so with x = pi (D N - pi f_d I Gamma) / (V sin(pi D)) the stable branch has
phase lag phi = arccos(x) = 3 pi / 2 - pi D - 2 alpha0. At D = 1/2 this is
x = (pi / 2V)(N - 2 pi f_d I Gamma) and phi = pi - 2 alpha0.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from rotorlock.dynamics import (
    IntegratorSettings,
    RotorState,
    SimulationError,
    Trajectory,
    run_periods,
    segment_template,
    settle,
    simulate,
)
from rotorlock.params import Coefficients, DriveConfig, scaled_coefficients

ANALYSIS_PERIODS = 1000
STROBE_SAMPLES = 100
LOCK_TOLERANCE = 1e-6  # rad, stroboscopic fixed-point residual
QUANTIZATION_TOLERANCE = 1e-6
THRESHOLD_TOLERANCE = 0.05
Q_MAX = 8
MAX_DOUBLINGS = 4
# fixed-point residual that marks a lock candidate worth a longer transient
CANDIDATE_RESIDUAL = 1e-2

THRESHOLD = "threshold"
LIBRATION = "libration"
UNRESOLVED = "unresolved"

# (alpha, omega / (2 pi f_d)) starting points for region maps
DEFAULT_ENSEMBLE = tuple((a, w) for a in (0.0, math.pi / 4) for w in (0.0, 0.25, 0.5, 1.0))


def lock_kind(p: int, q: int) -> str:
    """'lock_p_q' with q the cycle's period in drive periods, so a
    period-tripled 1:2 cycle is 'lock_3_6'; p < 0 marks rotation against
    the torque."""
    return f"lock_{p}_{q}"


@dataclass(frozen=True)
class LimitCycleReport:
    kind: str
    f_r: float  # Hz
    f_d: float  # Hz
    phase_lag: float | None = None  # rad, 1:2 locks only
    residual: float = math.inf
    quantization: float = math.inf
    p: int | None = None
    q: int | None = None
    threshold_frequency: float | None = None
    transient_periods: int = 0
    final_state: RotorState | None = None

    @property
    def locked(self) -> bool:
        return self.kind.startswith("lock_")

    @property
    def ratio(self) -> float:
        return self.f_r / self.f_d

    def as_dict(self) -> dict:
        d = asdict(self)
        d["final_state"] = None if self.final_state is None else asdict(self.final_state)
        return d


def threshold_frequency(coeffs: Coefficients, drive: DriveConfig | None = None) -> float:
    """Torque-damping balance duty N / (2 pi I Gamma); N / (4 pi I Gamma) at duty 1/2."""
    if coeffs.damping <= 0:
        raise ValueError("threshold frequency is undefined without damping (Gamma = 0)")
    duty = 0.5 if drive is None else drive.duty
    return duty * coeffs.torque / (2.0 * math.pi * coeffs.inertia * coeffs.damping)


def continuous_threshold_frequency(coeffs: Coefficients) -> float:
    """Terminal frequency N / (2 pi I Gamma) under permanent circular light."""
    return threshold_frequency(coeffs, DriveConfig(duty=0.5)) * 2.0


def lock_argument(coeffs: Coefficients, drive: DriveConfig) -> float:
    """Argument x of the arccos in the averaged 1:2 balance (see module doc)."""
    d = drive.duty
    drag = math.pi * drive.frequency * coeffs.inertia * coeffs.damping
    if coeffs.potential == 0:
        diff = d * coeffs.torque - drag
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return math.pi * (d * coeffs.torque - drag) / (coeffs.potential * math.sin(math.pi * d))


def phase_lag_analytic(coeffs: Coefficients, drive: DriveConfig) -> float | None:
    """arccos(x) on the 1:2 lockable region |x| <= 1, else None."""
    x = lock_argument(coeffs, drive)
    if not abs(x) <= 1.0:
        return None
    return math.acos(x)


def lockable(coeffs: Coefficients, drive: DriveConfig) -> bool:
    return phase_lag_analytic(coeffs, drive) is not None


def phase_offset(drive: DriveConfig) -> float:
    """phi = offset - 2 alpha0; pi at duty 1/2."""
    return 1.5 * math.pi - math.pi * drive.duty


def phase_lag_measured(
    traj: Trajectory,
    drive: DriveConfig | None = None,
    window_periods: int | None = None,
    slope_tolerance: float = 1e-5,
) -> float:
    """Least-squares fit of alpha(t) = alpha0 + pi f_d t over the trailing window.

    Returns phi = pi - 2 alpha0 (general duty: see :func:`phase_offset`)
    reduced to [0, pi].
    """
    drive = traj.drive if drive is None else drive
    w = traj.n_periods if window_periods is None else window_periods
    if w < 1 or w > traj.n_periods:
        raise ValueError(f"window of {w} periods does not fit the trajectory")
    n = w * traj.samples_per_period
    t = traj.time[-n:]
    a = traj.alpha[-n:]
    slope = (traj.alpha[-1] - traj.alpha[-1 - n]) / (traj.time[-1] - traj.time[-1 - n])
    target = math.pi * drive.frequency
    if abs(slope / target - 1.0) > slope_tolerance:
        raise ValueError(
            f"window is not 1:2 locked: mean slope {slope:.9g} rad/s vs pi f_d = {target:.9g}"
        )
    alpha0 = float(np.mean(a - target * t))
    phi = phase_offset(drive) - 2.0 * alpha0
    return abs(math.remainder(phi, 2.0 * math.pi))


@dataclass(frozen=True)
class StrobeAnalysis:
    kind: str
    f_r: float
    residual: float
    quantization: float
    p: int | None
    q: int | None
    candidate: bool  # quantized but not yet converged


def analyze_strobe(
    alpha: np.ndarray,
    omega: np.ndarray,
    f_d: float,
    threshold: float | None,
    torque_on: bool,
    window: int = ANALYSIS_PERIODS,
    residual_tolerance: float = LOCK_TOLERANCE,
    q_max: int = Q_MAX,
    strobe_samples: int = STROBE_SAMPLES,
) -> StrobeAnalysis:
    """Classify from states sampled once per drive period.

    ``alpha`` and ``omega`` hold ``window + 1`` or more consecutive
    period-boundary samples; omega residuals are measured in units of 2 pi f_d.
    """
    if len(alpha) < window + 1:
        raise ValueError("not enough stroboscopic samples for the analysis window")
    f_r = (alpha[-1] - alpha[-1 - window]) / (2.0 * math.pi * window) * f_d
    best_res = math.inf
    best_quant = math.inf
    candidate = False
    tail_a = alpha[-1 - window :]
    tail_w = omega[-1 - window :] / (2.0 * math.pi * f_d)
    for q in range(1, q_max + 1):
        # whole multiples of q periods keep the intra-cycle ripple out of f_r
        wq = q * (window // q)
        if wq < 1:
            break
        fq = (alpha[-1] - alpha[-1 - wq]) / (2.0 * math.pi * wq) * f_d
        p = int(round(fq * q / f_d))
        quant = abs(fq * q - f_d * p) / f_d
        m = min(strobe_samples, window // q)
        if m < 1:
            break
        sa = tail_a[:: -q][: m + 1]
        sw = tail_w[:: -q][: m + 1]
        da = np.diff(sa)
        da = np.abs(np.mod(da + 0.5 * math.pi, math.pi) - 0.5 * math.pi)
        res = float(max(da.max(), np.abs(np.diff(sw)).max()))
        if p == 0:
            best_res = min(best_res, res)
            continue
        if quant < QUANTIZATION_TOLERANCE:
            if res < residual_tolerance:
                return StrobeAnalysis(lock_kind(p, q), fq, res, quant, p, q, False)
            if res < CANDIDATE_RESIDUAL:
                candidate = True
        if quant < best_quant:
            best_quant = quant
        best_res = min(best_res, res)
    span = float(tail_a.max() - tail_a.min())
    if span < math.pi:
        kind = LIBRATION if torque_on else THRESHOLD
        return StrobeAnalysis(kind, f_r, best_res, best_quant, None, None, False)
    if threshold is not None and threshold > 0:
        if abs(f_r - threshold) < THRESHOLD_TOLERANCE * abs(f_r):
            return StrobeAnalysis(THRESHOLD, f_r, best_res, best_quant, None, None, candidate)
    return StrobeAnalysis(UNRESOLVED, f_r, best_res, best_quant, None, None, candidate)


def _analysis_stride(settings: IntegratorSettings, drive: DriveConfig, t0: float):
    """Stride giving at most 16 samples per period that divides the step count."""
    _, _, steps = segment_template((t0 * drive.frequency) % 1.0, drive.duty, settings.steps_per_half_period)
    total = int(steps.sum())
    spp = max(d for d in range(1, 17) if total % d == 0)
    return total // spp, spp


def classify(
    coeffs: Coefficients,
    drive: DriveConfig,
    initial: RotorState = RotorState(),
    settings: IntegratorSettings = IntegratorSettings(),
    *,
    external_torque: float = 0.0,
    analysis_periods: int = ANALYSIS_PERIODS,
    q_max: int = Q_MAX,
) -> LimitCycleReport:
    """Simulate past the transient and classify the asymptotic motion.

    The transient is doubled (at most four times) while the outcome is
    unresolved or a quantized state has not yet reached the fixed-point
    tolerance.
    """
    thr = threshold_frequency(coeffs, drive) if coeffs.damping > 0 else None
    state = settle(initial, coeffs, drive, settings, external_torque=external_torque)
    transient = settings.transient_periods
    base = max(settings.transient_periods, analysis_periods)
    for attempt in range(MAX_DOUBLINGS + 1):
        stride, spp = _analysis_stride(settings, drive, state.time)
        traj = simulate(
            state,
            coeffs,
            drive,
            replace(settings, stride=stride),
            analysis_periods,
            external_torque=external_torque,
        )
        res = analyze_strobe(
            traj.alpha[::spp],
            traj.omega[::spp],
            drive.frequency,
            thr,
            coeffs.torque + external_torque != 0,
            window=analysis_periods,
            q_max=q_max,
        )
        done = res.kind != UNRESOLVED and not (res.candidate and not res.kind.startswith("lock_"))
        if done or attempt == MAX_DOUBLINGS:
            break
        extra = base * 2**attempt
        state = settle(
            traj.final_state, coeffs, drive, settings, max(extra - analysis_periods, 0),
            external_torque=external_torque,
        )
        transient += extra
    phase = None
    if res.kind == "lock_1_2":
        phase = phase_lag_measured(traj, drive)
    return LimitCycleReport(
        kind=res.kind,
        f_r=res.f_r,
        f_d=drive.frequency,
        phase_lag=phase,
        residual=res.residual,
        quantization=res.quantization,
        p=res.p,
        q=res.q,
        threshold_frequency=thr,
        transient_periods=transient,
        final_state=traj.final_state,
    )


def locked_state_guess(coeffs: Coefficients, drive: DriveConfig) -> RotorState:
    """Starting point near the 1:2 cycle: alpha0 from the averaged balance and
    omega = pi f_d. Falls back to the lock boundary when unlockable."""
    phi = phase_lag_analytic(coeffs, drive)
    if phi is None:
        phi = 0.0 if lock_argument(coeffs, drive) > 0 else math.pi
    alpha0 = 0.5 * (phase_offset(drive) - phi)
    return RotorState(alpha0, math.pi * drive.frequency, 0.0)


# ---------------------------------------------------------------- region map


def coincidence_torque(gamma: np.ndarray | float, ratio: float, duty: float = 0.5):
    """Dimensionless torque at which threshold rotation runs at f_r = ratio f_d.

    From duty N / (2 pi I Gamma) = ratio f_d: n = 2 pi gamma ratio / duty, i.e.
    n = 2 pi gamma on the 1:2 line and n = pi gamma on the 1:4 line at duty 1/2.
    """
    return 2.0 * math.pi * np.asarray(gamma, dtype=float) * ratio / duty


@dataclass
class RegionMap:
    gamma: np.ndarray  # Gamma / f_d, strictly increasing
    torque: np.ndarray  # N / (I f_d^2), strictly increasing
    nv_ratio: float
    duty: float
    ensemble: tuple
    lockable: np.ndarray  # (n_gamma, n_torque) bool
    phase: np.ndarray  # analytic phi, NaN outside the region
    kinds: np.ndarray  # (n_gamma, n_torque, n_ensemble) str
    ratios: np.ndarray  # f_r / f_d, same shape
    settings: IntegratorSettings = field(default_factory=IntegratorSettings)

    def coincidence_cells(self, ratio: float = 0.5) -> list[tuple[int, int]]:
        """Per gamma column, the torque row nearest the coincidence line
        (only where the line lies inside the torque axis)."""
        out = []
        line = coincidence_torque(self.gamma, ratio, self.duty)
        lo, hi = self.torque[0], self.torque[-1]
        for i, n in enumerate(line):
            if lo <= n <= hi:
                out.append((i, int(np.argmin(np.abs(self.torque - n)))))
        return out

    def false_locks(self) -> list[tuple[int, int]]:
        """Cells with a simulated 1:2 lock outside the lockable region."""
        hit = np.any(self.kinds == "lock_1_2", axis=2) & ~self.lockable
        return [tuple(map(int, ij)) for ij in np.argwhere(hit)]

    def summary(self) -> dict:
        kinds, counts = np.unique(self.kinds, return_counts=True)
        line = self.coincidence_cells(0.5)
        all_lock = [bool(np.all(self.kinds[i, j] == "lock_1_2")) for i, j in line]
        return {
            "shape": [len(self.gamma), len(self.torque)],
            "gamma_range": [float(self.gamma[0]), float(self.gamma[-1])],
            "torque_range": [float(self.torque[0]), float(self.torque[-1])],
            "nv_ratio": self.nv_ratio,
            "duty": self.duty,
            "ensemble": [list(e) for e in self.ensemble],
            "lockable_cells": int(self.lockable.sum()),
            "outcome_counts": {str(k): int(c) for k, c in zip(kinds, counts)},
            "false_lock_cells": self.false_locks(),
            "coincidence_1_2_cells": len(line),
            "coincidence_1_2_all_locked": int(sum(all_lock)),
            "settings": asdict(self.settings),
        }


def _map_cell(task):
    g, n, nv, duty, ensemble, settings = task
    coeffs = scaled_coefficients(g, n, n / nv)
    drive = DriveConfig(1.0, duty)
    kinds, ratios = [], []
    for a, w in ensemble:
        try:
            rep = classify(coeffs, drive, RotorState(a, 2.0 * math.pi * w), settings)
            kinds.append(rep.kind)
            ratios.append(rep.ratio)
        except SimulationError:
            kinds.append(UNRESOLVED)
            ratios.append(math.nan)
    return kinds, ratios


def default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def map_region(
    gamma,
    torque,
    nv_ratio: float,
    ensemble=DEFAULT_ENSEMBLE,
    settings: IntegratorSettings = IntegratorSettings(),
    duty: float = 0.5,
    jobs: int | None = None,
) -> RegionMap:
    """Analytic lockability and simulated outcomes on a (gamma, torque) grid.

    Simulations run in drive-period units (f_d = 1, I = 1). Cells are
    distributed over ``jobs`` worker processes and gathered in grid order.
    """
    gamma = np.asarray(gamma, dtype=float)
    torque = np.asarray(torque, dtype=float)
    for name, ax in (("gamma", gamma), ("torque", torque)):
        if ax.ndim != 1 or ax.size == 0:
            raise ValueError(f"{name} axis must be a non-empty 1-D sequence")
        if np.any(np.diff(ax) <= 0):
            raise ValueError(f"{name} axis must be strictly increasing")
    if not nv_ratio > 0:
        raise ValueError("nv_ratio must be positive")
    ensemble = tuple(tuple(map(float, e)) for e in ensemble)
    drive = DriveConfig(1.0, duty)
    lock = np.zeros((gamma.size, torque.size), dtype=bool)
    phase = np.full(lock.shape, np.nan)
    tasks = []
    for i, g in enumerate(gamma):
        for j, n in enumerate(torque):
            phi = phase_lag_analytic(scaled_coefficients(g, n, n / nv_ratio), drive)
            if phi is not None:
                lock[i, j] = True
                phase[i, j] = phi
            tasks.append((g, n, nv_ratio, duty, ensemble, settings))
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    if jobs == 1:
        results = list(map(_map_cell, tasks))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_map_cell, tasks, chunksize=max(1, len(tasks) // (8 * jobs))))
    shape = (gamma.size, torque.size, len(ensemble))
    kinds = np.array([k for k, _ in results], dtype=object).reshape(shape).astype(str)
    ratios = np.array([r for _, r in results], dtype=float).reshape(shape)
    return RegionMap(gamma, torque, float(nv_ratio), duty, ensemble, lock, phase, kinds, ratios, settings)


# ---------------------------------------------------------------- paths

DIMENSIONLESS = "dimensionless"
PHYSICAL = "physical"


@dataclass(frozen=True)
class ParameterPath:
    """Waypoints in (Gamma/f_d, N/(I f_d^2)) or in (p_g [Pa], f_d [Hz]).

    Parameters ramp linearly in the waypoint coordinates, in
    ``points_per_segment`` steps per segment; each step is a ramp of
    ``ramp_periods`` followed by a dwell of ``dwell_periods`` at which the
    motion is classified. ``dwell_periods`` and ``ramp_periods`` may be given
    per segment.
    """

    waypoints: tuple
    space: str = DIMENSIONLESS
    dwell_periods: int | tuple = 4000
    ramp_periods: int | tuple = 2000
    points_per_segment: int = 15
    preparation_periods: int = 8000
    labels: tuple | None = None

    def __post_init__(self):
        wps = tuple(tuple(float(c) for c in w) for w in self.waypoints)
        object.__setattr__(self, "waypoints", wps)
        if len(wps) < 1 or any(len(w) != 2 for w in wps):
            raise ValueError("path.waypoints must be a list of coordinate pairs")
        if self.space not in (DIMENSIONLESS, PHYSICAL):
            raise ValueError(f"path.space must be {DIMENSIONLESS!r} or {PHYSICAL!r}")
        if any(c < 0 for w in wps for c in w):
            raise ValueError("path.waypoints must be non-negative")
        if self.space == PHYSICAL and any(w[1] <= 0 for w in wps):
            raise ValueError("path.waypoints: drive frequency must be positive")
        if self.space == DIMENSIONLESS and any(w[1] <= 0 for w in wps):
            raise ValueError("path.waypoints: dimensionless torque must be positive")
        for name in ("dwell_periods", "ramp_periods"):
            val = getattr(self, name)
            vals = tuple(val) if isinstance(val, (list, tuple)) else (val,) * self.n_segments
            if len(vals) != self.n_segments:
                raise ValueError(f"path.{name} needs one value per segment")
            floor = 1 if name == "dwell_periods" else 0
            if any(int(v) != v or v < floor for v in vals):
                raise ValueError(f"path.{name} must be integers >= {floor}")
            object.__setattr__(self, name, tuple(int(v) for v in vals))
        if self.points_per_segment < 1:
            raise ValueError("path.points_per_segment must be >= 1")
        if self.preparation_periods < 0:
            raise ValueError("path.preparation_periods must be >= 0")

    @property
    def n_segments(self) -> int:
        return max(len(self.waypoints) - 1, 1)

    def scaled(self, ramp: float = 1.0, dwell: float = 1.0) -> "ParameterPath":
        """Same path with ramp and dwell lengths multiplied (slower for > 1)."""
        return replace(
            self,
            ramp_periods=tuple(int(round(r * ramp)) for r in self.ramp_periods),
            dwell_periods=tuple(max(1, int(round(d * dwell))) for d in self.dwell_periods),
        )


@dataclass(frozen=True)
class PathModel:
    """Maps path coordinates to equation-of-motion coefficients.

    For dimensionless paths the rod has fixed N/I and V/I (only pressure and
    drive frequency change, as in the experiment), so
    f_d = f_ref sqrt(n_ref / n); with the defaults f_d = 1 at the first
    waypoint. For physical paths Gamma = damping_per_pa * p_g.
    """

    torque_accel: float  # N / I
    potential_accel: float  # V / I
    damping_per_pa: float | None = None
    duty: float = 0.5

    @classmethod
    def dimensionless(cls, nv_ratio: float, n_ref: float, f_ref: float = 1.0, duty: float = 0.5):
        na = n_ref * f_ref**2
        return cls(na, na / nv_ratio, None, duty)

    @classmethod
    def physical(cls, coeffs: Coefficients, damping_per_pa: float, duty: float = 0.5):
        return cls(coeffs.torque_accel, coeffs.potential_accel, damping_per_pa, duty)

    def evaluate(self, space: str, a: np.ndarray, b: np.ndarray):
        """(period, damping, torque accel, potential accel) arrays."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if space == DIMENSIONLESS:
            fd = np.sqrt(self.torque_accel / b)
            damping = a * fd
        else:
            if self.damping_per_pa is None:
                raise ValueError("physical paths need damping_per_pa")
            fd = b
            damping = self.damping_per_pa * a
        ones = np.ones_like(fd)
        return 1.0 / fd, damping, self.torque_accel * ones, self.potential_accel * ones

    def point(self, space: str, a: float, b: float) -> tuple[Coefficients, DriveConfig]:
        period, damping, n, v = self.evaluate(space, [a], [b])
        coeffs = Coefficients(float(damping[0]), float(n[0]), float(v[0]), 1.0)
        return coeffs, DriveConfig(1.0 / float(period[0]), self.duty)


@dataclass(frozen=True)
class PathPoint:
    segment: int
    index: int  # step within the segment, 1..points_per_segment
    coords: tuple  # waypoint-space coordinates
    gamma: float  # Gamma / f_d
    torque: float  # N / (I f_d^2)
    lock_argument: float
    report: LimitCycleReport

    def as_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "report"}
        d["coords"] = list(self.coords)
        d["report"] = self.report.as_dict()
        return d


# Path dwells are shorter than a full classify() transient, so the
# fixed-point residual is relaxed; frequency quantization stays at 1e-6.
PATH_RESIDUAL_TOLERANCE = 1e-2


def sweep_path(
    path: ParameterPath,
    model: PathModel,
    initial: RotorState | None = None,
    settings: IntegratorSettings = IntegratorSettings(),
    *,
    residual_tolerance: float = PATH_RESIDUAL_TOLERANCE,
    analysis_periods: int = ANALYSIS_PERIODS,
) -> list[PathPoint]:
    """Integrate continuously along the path and classify at every dwell.

    Parameters are piecewise constant over each drive period and the state is
    carried across the whole path. ``initial`` defaults to rest at the first
    waypoint with omega = pi f_d.
    """
    S = settings.steps_per_half_period
    _, _, steps = segment_template(0.0, model.duty, S)
    steps_pp = int(steps.sum())
    wps = [np.array(w) for w in path.waypoints]
    if len(wps) == 1:
        wps = wps * 2
    c0, d0 = model.point(path.space, *wps[0])
    state = initial if initial is not None else RotorState(0.0, math.pi * d0.frequency, 0.0)
    state = replace(state, time=0.0)

    def advance(points, record):
        period, damping, n, v = model.evaluate(path.space, points[:, 0], points[:, 1])
        return run_periods(
            state, period, damping, n, v, model.duty, S, steps_pp, record=record, phase0=0.0
        )

    def report_at(seg, k, target, alpha, omega):
        coeffs, drive = model.point(path.space, *target)
        thr = threshold_frequency(coeffs, drive) if coeffs.damping > 0 else None
        window = min(analysis_periods, len(alpha) - 1)
        res = analyze_strobe(
            alpha,
            omega,
            drive.frequency,
            thr,
            coeffs.torque != 0,
            window=window,
            residual_tolerance=residual_tolerance,
        )
        report = LimitCycleReport(
            kind=res.kind,
            f_r=res.f_r,
            f_d=drive.frequency,
            residual=res.residual,
            quantization=res.quantization,
            p=res.p,
            q=res.q,
            threshold_frequency=thr,
            final_state=state,
        )
        return PathPoint(
            seg,
            k,
            tuple(map(float, target)),
            coeffs.damping / drive.frequency,
            coeffs.torque_accel / drive.frequency**2,
            lock_argument(coeffs, drive),
            report,
        )

    # the starting waypoint is reported after preparation (or one dwell)
    hold = np.repeat(wps[0][None, :], max(path.preparation_periods, path.dwell_periods[0]), axis=0)
    state, _, alpha, omega, _, _ = advance(hold, True)
    out = [report_at(0, 0, wps[0], alpha, omega)]
    prev = wps[0]
    for seg in range(len(wps) - 1):
        a, b = wps[seg], wps[seg + 1]
        ramp = path.ramp_periods[seg]
        dwell = path.dwell_periods[seg]
        for k in range(1, path.points_per_segment + 1):
            target = a + (b - a) * k / path.points_per_segment
            if ramp:
                s = np.arange(1, ramp + 1)[:, None] / ramp
                state = advance(prev[None, :] + (target - prev)[None, :] * s, False)[0]
            hold = np.repeat(target[None, :], dwell, axis=0)
            state, _, alpha, omega, _, _ = advance(hold, True)
            out.append(report_at(seg, k, target, alpha, omega))
            prev = target
    return out


def collapse_kinds(points: list[PathPoint]) -> list[str]:
    """Run-length collapse of the classification sequence."""
    seq: list[str] = []
    for p in points:
        if not seq or seq[-1] != p.report.kind:
            seq.append(p.report.kind)
    return seq


def load_path(data: dict) -> ParameterPath:
    known = {f for f in ParameterPath.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"path: unknown keys {sorted(unknown)}")
    return ParameterPath(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()})


def read_path_file(filename) -> ParameterPath:
    with open(filename) as fh:
        return load_path(json.load(fh))
