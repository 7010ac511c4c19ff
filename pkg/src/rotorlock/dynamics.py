"""Integration of the periodically switched rotor equation

    alpha'' = -Gamma alpha' + (N/I) h(t) - (V/I) sin(2 alpha) [1 - h(t)]

The right-hand side is discontinuous at every polarization switch, so each
period is split into constant-polarization segments whose endpoints coincide
with the switch times, and each segment is advanced with fixed-step RK4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from rotorlock import _kernels
from rotorlock.params import Coefficients, DriveConfig

CIRCULAR = "circular"
LINEAR = "linear"


class SimulationError(RuntimeError):
    """Raised when the state overflows; carries the last finite state."""

    def __init__(self, message, last_state):
        super().__init__(message)
        self.last_state = last_state


@dataclass(frozen=True)
class RotorState:
    alpha: float = 0.0  # rad, unwrapped
    omega: float = 0.0  # rad/s
    time: float = 0.0  # s

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.alpha, self.omega, self.time)):
            raise ValueError(f"non-finite rotor state {self!r}")


@dataclass(frozen=True)
class IntegratorSettings:
    steps_per_half_period: int = 200
    transient_periods: int = 2000
    stride: int = 25

    def __post_init__(self):
        if int(self.steps_per_half_period) != self.steps_per_half_period:
            raise ValueError("steps_per_half_period must be an integer")
        if self.steps_per_half_period < 16:
            raise ValueError("steps_per_half_period must be >= 16")
        if self.transient_periods < 0:
            raise ValueError("transient_periods must be >= 0")
        if self.stride < 1:
            raise ValueError("stride must be a positive integer")


@dataclass
class Trajectory:
    time: np.ndarray
    alpha: np.ndarray
    omega: np.ndarray
    polarization: np.ndarray  # h(t) at each sample, 1 = circular
    coeffs: Coefficients
    drive: DriveConfig
    settings: IntegratorSettings
    n_periods: int
    samples_per_period: int
    external_torque: float = 0.0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.time.shape[0]

    @property
    def initial_state(self) -> RotorState:
        return RotorState(float(self.alpha[0]), float(self.omega[0]), float(self.time[0]))

    @property
    def final_state(self) -> RotorState:
        return RotorState(float(self.alpha[-1]), float(self.omega[-1]), float(self.time[-1]))

    def period_indices(self, every: int = 1) -> np.ndarray:
        return np.arange(0, len(self), every * self.samples_per_period)

    def tail(self, n_periods: int) -> "Trajectory":
        """The trailing ``n_periods`` drive periods (period-aligned)."""
        if n_periods > self.n_periods:
            raise ValueError(
                f"requested {n_periods} periods from a {self.n_periods}-period trajectory"
            )
        start = len(self) - 1 - n_periods * self.samples_per_period
        return replace(
            self,
            time=self.time[start:],
            alpha=self.alpha[start:],
            omega=self.omega[start:],
            polarization=self.polarization[start:],
            n_periods=n_periods,
        )


def drive_waveform(t, drive: DriveConfig):
    """h(t): 1 during the circular-polarization fraction of each period, else 0."""
    phase = np.mod(np.asarray(t, dtype=float) * drive.frequency, 1.0)
    h = (phase < drive.duty).astype(int)
    return int(h) if h.ndim == 0 else h


def segment_template(phase0: float, duty: float, steps_per_half: int):
    """Constant-polarization segments covering one period that starts at
    fractional drive phase ``phase0``.

    Returns (fractions, circular flags, step counts). Full half periods get
    exactly ``steps_per_half`` steps; partial ones proportionally fewer.
    """
    phase0 = float(phase0) % 1.0
    # absorb rounding in accumulated times so no sliver segments appear
    if min(phase0, 1.0 - phase0) < 1e-9:
        phase0 = 0.0
    elif abs(phase0 - duty) < 1e-9:
        phase0 = duty
    marks = sorted({phase0, duty, 1.0, 1.0 + duty, 1.0 + phase0})
    marks = [m for m in marks if phase0 <= m <= 1.0 + phase0]
    fracs, circ, steps = [], [], []
    for lo, hi in zip(marks[:-1], marks[1:]):
        length = hi - lo
        if length <= 0:
            continue
        is_circ = ((lo % 1.0) < duty) if lo < 1.0 else ((lo - 1.0) < duty)
        half_len = duty if is_circ else 1.0 - duty
        if abs(length - half_len) <= 1e-12:
            n = steps_per_half
        else:
            n = max(1, int(math.ceil(steps_per_half * length / half_len - 1e-9)))
        fracs.append(length)
        circ.append(is_circ)
        steps.append(n)
    return np.array(fracs), np.array(circ, dtype=np.bool_), np.array(steps, dtype=np.int64)


def _sample_polarization(fracs, circ, steps, stride, spp, n_periods):
    """h(t) for each recorded sample (the segment the sample starts)."""
    boundaries = np.concatenate(([0], np.cumsum(steps)))
    step_in_period = (np.arange(1, spp + 1) * stride) % boundaries[-1]
    seg = np.searchsorted(boundaries, step_in_period, side="right") - 1
    per_period = circ[seg].astype(np.int8)
    first = np.array([circ[0]], dtype=np.int8)
    return np.concatenate((first, np.tile(per_period, n_periods)))


def _sample_offsets(fracs, steps, stride, spp):
    """Time offset of each recorded sample within its period, in units of the period."""
    starts = np.concatenate(([0.0], np.cumsum(fracs)))
    boundaries = np.concatenate(([0], np.cumsum(steps)))
    k = np.arange(1, spp + 1) * stride
    seg = np.searchsorted(boundaries, k, side="left") - 1
    seg = np.clip(seg, 0, len(steps) - 1)
    within = k - boundaries[seg]
    return starts[seg] + within * fracs[seg] / steps[seg]


def run_periods(
    state: RotorState,
    periods: np.ndarray,
    damping: np.ndarray,
    torque_accel: np.ndarray,
    potential_accel: np.ndarray,
    duty: float,
    steps_per_half: int,
    stride: int,
    extra_accel: np.ndarray | None = None,
    record: bool = True,
    phase0: float | None = None,
):
    """Integrate with per-period parameters (accelerations already divided by I).

    ``phase0`` is the drive phase of ``state`` in periods; by default it is
    taken from ``state.time`` and the first period.

    Returns ``(final_state, time, alpha, omega, polarization, spp)``; the
    sample arrays are ``None`` when ``record`` is false.
    """
    periods = np.ascontiguousarray(periods, dtype=float)
    n = periods.shape[0]
    if extra_accel is None:
        extra_accel = np.zeros(n)
    if phase0 is None:
        phase0 = (state.time / periods[0]) % 1.0 if n else 0.0
    fracs, circ, steps = segment_template(phase0, duty, steps_per_half)
    steps_per_period = int(steps.sum())
    if record:
        if steps_per_period % stride:
            raise ValueError(
                f"stride {stride} does not divide {steps_per_period} steps per period"
            )
        spp = steps_per_period // stride
        rec_a = np.empty(n * spp)
        rec_w = np.empty(n * spp)
        kstride = stride
    else:
        spp = 0
        rec_a = rec_w = np.empty(0)
        kstride = 0
    a, w, n_rec, done = _kernels.integrate_periods(
        state.alpha,
        state.omega,
        fracs,
        circ,
        steps,
        periods,
        np.ascontiguousarray(damping, dtype=float),
        np.ascontiguousarray(torque_accel, dtype=float),
        np.ascontiguousarray(potential_accel, dtype=float),
        np.ascontiguousarray(extra_accel, dtype=float),
        kstride,
        rec_a,
        rec_w,
    )
    if np.all(periods == periods[0]):
        starts = state.time + periods[0] * np.arange(n + 1)
    else:
        starts = state.time + np.concatenate(([0.0], np.cumsum(periods)))
    if done < n:
        last = RotorState(a, w, float(starts[done]))
        raise SimulationError(
            f"state became non-finite during period {done}; last finite state {last}", last
        )
    final = RotorState(a, w, float(starts[n]))
    if not record:
        return final, None, None, None, None, 0
    offsets = _sample_offsets(fracs, steps, stride, spp)
    t = (starts[:-1, None] + periods[:, None] * offsets[None, :]).ravel()
    # the last sample of each period sits on the next period's boundary
    t[spp - 1 :: spp] = starts[1:]
    time = np.concatenate(([state.time], t))
    alpha = np.concatenate(([state.alpha], rec_a))
    omega = np.concatenate(([state.omega], rec_w))
    pol = _sample_polarization(fracs, circ, steps, stride, spp, n)
    return final, time, alpha, omega, pol, spp


def simulate(
    initial: RotorState,
    coeffs: Coefficients,
    drive: DriveConfig,
    settings: IntegratorSettings = IntegratorSettings(),
    n_periods: int = 1,
    *,
    external_torque: float = 0.0,
) -> Trajectory:
    """Integrate exactly ``n_periods`` drive periods from ``initial``.

    ``settings.transient_periods`` is not applied here; see
    :func:`settle` for discarding transients.
    """
    if n_periods < 1:
        raise ValueError("n_periods must be >= 1")
    ones = np.ones(n_periods)
    final, t, a, w, pol, spp = run_periods(
        initial,
        ones * drive.period,
        ones * coeffs.damping,
        ones * coeffs.torque_accel,
        ones * coeffs.potential_accel,
        drive.duty,
        settings.steps_per_half_period,
        settings.stride,
        extra_accel=ones * (external_torque / coeffs.inertia),
    )
    return Trajectory(
        time=t,
        alpha=a,
        omega=w,
        polarization=pol,
        coeffs=coeffs,
        drive=drive,
        settings=settings,
        n_periods=n_periods,
        samples_per_period=spp,
        external_torque=external_torque,
    )


def settle(
    initial: RotorState,
    coeffs: Coefficients,
    drive: DriveConfig,
    settings: IntegratorSettings = IntegratorSettings(),
    n_periods: int | None = None,
    *,
    external_torque: float = 0.0,
) -> RotorState:
    """Advance without recording (default: ``settings.transient_periods``)."""
    n = settings.transient_periods if n_periods is None else n_periods
    if n == 0:
        return initial
    ones = np.ones(n)
    final, *_ = run_periods(
        initial,
        ones * drive.period,
        ones * coeffs.damping,
        ones * coeffs.torque_accel,
        ones * coeffs.potential_accel,
        drive.duty,
        settings.steps_per_half_period,
        settings.stride,
        extra_accel=ones * (external_torque / coeffs.inertia),
        record=False,
    )
    return final


def step_segment(
    state: RotorState,
    coeffs: Coefficients,
    polarization: str,
    dt: float,
    substeps: int,
    *,
    drive: DriveConfig | None = None,
    external_torque: float = 0.0,
) -> RotorState:
    """Advance one constant-polarization interval with ``substeps`` RK4 steps.

    When ``drive`` is given the interval [t, t + dt] is checked against the
    switching schedule and a ValueError is raised if it crosses a switch or
    does not match ``polarization``.
    """
    if polarization not in (CIRCULAR, LINEAR):
        raise ValueError(f"polarization must be {CIRCULAR!r} or {LINEAR!r}")
    if dt <= 0 or substeps < 1:
        raise ValueError("dt must be positive and substeps >= 1")
    circular = polarization == CIRCULAR
    if drive is not None:
        T = drive.period
        start = (state.time / T) % 1.0
        if start > 1.0 - 1e-12:
            start = 0.0
        end = start + dt / T
        if circular:
            ok = start < drive.duty and end <= drive.duty * (1 + 1e-12)
        else:
            ok = start >= drive.duty * (1 - 1e-12) and end <= 1.0 + 1e-12
        if not ok:
            raise ValueError(
                f"interval [{state.time}, {state.time + dt}] crosses a polarization switch "
                f"or is not {polarization}"
            )
    a, w = _kernels.rk4_advance(
        state.alpha,
        state.omega,
        coeffs.damping,
        coeffs.torque_accel,
        coeffs.potential_accel,
        external_torque / coeffs.inertia,
        circular,
        dt / substeps,
        int(substeps),
    )
    if not (math.isfinite(a) and math.isfinite(w)):
        raise SimulationError("state became non-finite", state)
    return RotorState(a, w, state.time + dt)


def mean_rotation_frequency(traj: Trajectory, window_periods: int) -> float:
    """(alpha(t_end) - alpha(t_end - W)) / (2 pi W) over the trailing window."""
    if window_periods < 1 or window_periods > traj.n_periods:
        raise ValueError(
            f"window of {window_periods} periods does not fit a "
            f"{traj.n_periods}-period trajectory"
        )
    i0 = len(traj) - 1 - window_periods * traj.samples_per_period
    dt = traj.time[-1] - traj.time[i0]
    return float((traj.alpha[-1] - traj.alpha[i0]) / (2.0 * math.pi * dt))


def stroboscopic_map(traj: Trajectory, m: int = 1) -> np.ndarray:
    """Samples (alpha mod pi, omega) taken every ``m`` drive periods."""
    if m < 1:
        raise ValueError("m must be >= 1")
    idx = traj.period_indices(m)
    return np.column_stack((np.mod(traj.alpha[idx], math.pi), traj.omega[idx]))
