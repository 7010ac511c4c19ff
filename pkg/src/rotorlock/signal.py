"""Detector signal synthesis and the measurement chain.

The detected intensity is modelled as

    s(t) = s0 + A (1 + eps(t)) cos^2(alpha(t) - alpha_det) + n(t)

which is pi-periodic in alpha (head-tail symmetry) and maximal at
alpha - alpha_det = pi. A rod rotating at f_r therefore produces a tone at
2 f_r; a 1:2-locked rod shows up exactly at f_d.

The chain mirrors the experiment: mix with a local oscillator, low-pass and
resample to 2 kS/s, then either estimate spectra or demodulate with a
dual-phase lock-in. All oscillators use absolute time, so phases measured at
the end of the chain refer to the drive clock (t = 0 is a switch to circular
polarization).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import optimize
from scipy import signal as sps

from rotorlock.dynamics import Trajectory


@dataclass
class SignalTrace:
    samples: np.ndarray
    sample_rate: float  # Hz
    carrier: float | None = None  # nominal tone frequency, Hz
    start_time: float = 0.0  # s, absolute time of samples[0]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if self.carrier is not None and not self.sample_rate > 2.0 * abs(self.carrier):
            raise ValueError(
                f"sample rate {self.sample_rate} Hz does not resolve the {self.carrier} Hz carrier"
            )
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return len(self)

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    @property
    def time(self) -> np.ndarray:
        return self.start_time + np.arange(len(self)) / self.sample_rate

    def read(self, start: int, count: int) -> np.ndarray:
        return self.samples[start : start + count]


@dataclass(frozen=True)
class NoiseSpec:
    """Laser power noise (multiplicative) and detector noise (additive).

    ``power_rms`` is white Gaussian relative power noise per sample;
    ``flicker_rms`` adds 1/f power noise between ``flicker_band`` (Hz).
    ``additive_rms`` is white noise in signal units.
    """

    power_rms: float = 0.003
    flicker_rms: float = 0.0
    flicker_band: tuple = (1.0, 1e4)
    additive_rms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("power_rms", "flicker_rms", "additive_rms"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"noise.{name} must be >= 0")
        lo, hi = self.flicker_band
        if not 0 < lo < hi:
            raise ValueError("noise.flicker_band must satisfy 0 < low < high")

    @property
    def silent(self) -> bool:
        return self.power_rms == 0 and self.flicker_rms == 0 and self.additive_rms == 0


NOISELESS = NoiseSpec(power_rms=0.0)


class NoiseStream:
    """Sequential noise generator; the sample sequence depends only on the
    seed, so chunked and single-shot synthesis agree."""

    # flicker noise: sum of first-order Markov processes with log-spaced
    # corner frequencies, three per decade
    def __init__(self, spec: NoiseSpec, sample_rate: float):
        self.spec = spec
        # one generator per component (and per flicker branch) so the
        # sequence does not depend on how the samples are chunked
        seeds = np.random.SeedSequence(spec.seed).spawn(2)
        self._power_rng = np.random.default_rng(seeds[0])
        self._add_rng = np.random.default_rng(seeds[1])
        self.fs = sample_rate
        self._poles = None
        if spec.flicker_rms > 0:
            lo, hi = spec.flicker_band
            hi = min(hi, 0.25 * sample_rate)
            n = max(2, int(math.ceil(3 * math.log10(hi / lo))) + 1)
            corners = np.geomspace(lo, hi, n)
            self._poles = np.exp(-2.0 * math.pi * corners / sample_rate)
            # stationary variance of each AR(1) branch is 1
            self._gain = np.sqrt(1.0 - self._poles**2)
            branch = np.random.SeedSequence(spec.seed, spawn_key=(2,)).spawn(n)
            self._branch_rng = [np.random.default_rng(b) for b in branch]
            self._state = np.array([r.standard_normal() for r in self._branch_rng])
            self._norm = spec.flicker_rms / math.sqrt(n)

    def draw(self, n: int):
        """(relative power noise, additive noise) for the next ``n`` samples."""
        spec = self.spec
        eps = np.zeros(n)
        if spec.power_rms > 0:
            eps += spec.power_rms * self._power_rng.standard_normal(n)
        if self._poles is not None:
            acc = np.zeros(n)
            for i, (a, g) in enumerate(zip(self._poles, self._gain)):
                white = self._branch_rng[i].standard_normal(n)
                y, _ = sps.lfilter([g], [1.0, -a], white, zi=[a * self._state[i]])
                self._state[i] = y[-1]
                acc += y
            eps += self._norm * acc
        add = spec.additive_rms * self._add_rng.standard_normal(n) if spec.additive_rms > 0 else None
        return eps, add


def _detector(alpha, detector_angle, offset, amplitude, eps=None, add=None):
    c = np.cos(alpha - detector_angle)
    s = c * c
    if eps is not None:
        s = s * (1.0 + eps)
    s = offset + amplitude * s
    if add is not None:
        s = s + add
    return s


def _uniform_rate(traj: Trajectory) -> float:
    dt = np.diff(traj.time)
    if dt.size == 0:
        raise ValueError("trajectory needs at least two samples")
    step = traj.drive.period / traj.samples_per_period
    if np.max(np.abs(dt - step)) > 1e-6 * step:
        raise ValueError("trajectory samples are not uniformly spaced")
    return 1.0 / step


def synthesize_detector(
    traj: Trajectory,
    detector_angle: float = 0.0,
    noise: NoiseSpec = NOISELESS,
    offset: float = 0.0,
    amplitude: float = 1.0,
    carrier: float | None = None,
) -> SignalTrace:
    """Detector trace sampled at the trajectory's output grid (the final
    sample, which starts the next period, is dropped)."""
    fs = _uniform_rate(traj)
    alpha = traj.alpha[:-1]
    eps = add = None
    if not noise.silent:
        eps, add = NoiseStream(noise, fs).draw(alpha.size)
    s = _detector(alpha, detector_angle, offset, amplitude, eps, add)
    return SignalTrace(
        s,
        fs,
        carrier,
        float(traj.time[0]),
        {"detector_angle": detector_angle, "noise_seed": noise.seed},
    )


@dataclass
class LockedCycle:
    """One repeating block of a converged locked trajectory.

    ``alpha`` holds ``block_periods * samples_per_period`` samples starting at
    a period boundary; the block repeats in alpha mod pi, which is all the
    detector sees.
    """

    alpha: np.ndarray
    sample_rate: float
    block_periods: int
    drive_frequency: float
    start_time: float  # absolute time of alpha[0], a multiple of the period

    @classmethod
    def from_trajectory(cls, traj: Trajectory, block_periods: int = 1, tolerance: float = 1e-7):
        _uniform_rate(traj)
        fs = traj.drive.frequency * traj.samples_per_period
        n = block_periods * traj.samples_per_period
        if len(traj) < n + 1:
            raise ValueError("trajectory shorter than one block")
        a = traj.alpha[-n - 1 :]
        w = traj.omega[-n - 1 :]
        advance = a[-1] - a[0]
        slip = abs(math.remainder(advance, math.pi))
        dw = abs(w[-1] - w[0]) / (2.0 * math.pi * traj.drive.frequency)
        if slip > tolerance or dw > tolerance:
            raise ValueError(
                f"trajectory is not periodic over {block_periods} periods "
                f"(alpha slip {slip:.2e} rad, omega slip {dw:.2e})"
            )
        t0 = traj.time[-n - 1]
        k = round(t0 * traj.drive.frequency)
        return cls(a[:-1].copy(), fs, block_periods, traj.drive.frequency, k / traj.drive.frequency)

    def alpha_at(self, start: int, count: int) -> np.ndarray:
        """alpha (mod pi) for samples start..start+count counted from start_time."""
        idx = (start + np.arange(count)) % self.alpha.size
        return self.alpha[idx]


class CycleSource:
    """Streaming detector signal built from a locked cycle.

    ``detector_angle`` may be a constant or a callable of absolute time
    (used to program phase steps).
    """

    def __init__(
        self,
        cycle: LockedCycle,
        n_samples: int,
        detector_angle=0.0,
        noise: NoiseSpec = NOISELESS,
        offset: float = 0.0,
        amplitude: float = 1.0,
        carrier: float | None = None,
    ):
        self.cycle = cycle
        self.n_samples = int(n_samples)
        self.sample_rate = cycle.sample_rate
        self.start_time = cycle.start_time
        self.carrier = cycle.drive_frequency if carrier is None else carrier
        self.detector_angle = detector_angle
        self.noise = noise
        self.offset = offset
        self.amplitude = amplitude
        self._stream = None if noise.silent else NoiseStream(noise, self.sample_rate)
        self._next = 0
        self._block = None
        if not callable(detector_angle):
            c = np.cos(cycle.alpha - detector_angle)
            self._block = c * c

    def __len__(self):
        return self.n_samples

    def read(self, start: int, count: int) -> np.ndarray:
        count = max(0, min(count, self.n_samples - start))
        eps = add = None
        if self._stream is not None:
            if start != self._next:
                raise ValueError("noisy sources must be read sequentially")
            eps, add = self._stream.draw(count)
        self._next = start + count
        idx = (start + np.arange(count)) % self.cycle.alpha.size
        if self._block is not None:
            s = self._block[idx]
            if eps is not None:
                s = s * (1.0 + eps)
            s = self.offset + self.amplitude * s
            return s if add is None else s + add
        ang = self.detector_angle(self.start_time + (start + np.arange(count)) / self.sample_rate)
        return _detector(self.cycle.alpha[idx], ang, self.offset, self.amplitude, eps, add)

    def to_trace(self) -> SignalTrace:
        return SignalTrace(self.read(0, self.n_samples), self.sample_rate, self.carrier, self.start_time)


def _rate_ratio(input_rate: float, output_rate: float) -> tuple[int, int]:
    frac = Fraction(output_rate / input_rate).limit_denominator(10**7)
    if abs(float(frac) * input_rate - output_rate) > 1e-9 * output_rate:
        raise ValueError("output rate is not a rational fraction of the input rate")
    return frac.numerator, frac.denominator


LO_TABLE_MAX = 1 << 23


def _lo_period(f_lo: float, fs: float) -> int | None:
    """Samples after which the oscillator repeats exactly, if tabulable."""
    frac = Fraction(f_lo) / Fraction(fs)
    period = frac.denominator
    return period if period <= LO_TABLE_MAX else None


def mix_down(
    trace,
    f_lo: float,
    output_rate: float = 2000.0,
    carrier: float | None = None,
    chunk: int = 1 << 22,
) -> SignalTrace:
    """Multiply by cos(2 pi f_lo t), low-pass and resample to ``output_rate``.

    The low-pass is the linear-phase Kaiser FIR of
    :func:`scipy.signal.resample_poly`, applied zero-phase, so the reported
    group delay is 0. ``trace`` may be a :class:`SignalTrace` or any source
    with ``read``, ``sample_rate``, ``start_time`` and ``len`` (processed in
    chunks, so records much larger than memory are fine).
    """
    fs = trace.sample_rate
    carrier = trace.carrier if carrier is None else carrier
    tone = None if carrier is None else abs(carrier - f_lo)
    if tone is not None and tone >= 0.5 * output_rate:
        raise ValueError(
            f"difference tone {tone} Hz is above the output Nyquist frequency {0.5 * output_rate} Hz"
        )
    up, down = _rate_ratio(fs, output_rate)
    n_in = len(trace)
    t0 = trace.start_time
    phase_step = f_lo / fs

    def lo_direct(start, count):
        # phase in cycles, reduced before scaling to keep precision
        n = start + np.arange(count)
        ph = np.mod(f_lo * t0 + phase_step * n, 1.0)
        return np.cos(2.0 * math.pi * ph)

    period = _lo_period(f_lo, fs)
    if period is not None and period < n_in:
        table = lo_direct(0, period)

        def lo_table(start, count):
            return table[(start + np.arange(count)) % period]

        lo = lo_table
    else:
        lo = lo_direct

    if up != 1 or n_in <= chunk:
        x = trace.read(0, n_in) * lo(0, n_in)
        y = sps.resample_poly(x, up, down)
    else:
        half = 10 * down
        h = sps.firwin(2 * half + 1, 1.0 / down, window=("kaiser", 5.0))
        n_out = -(-n_in // down)
        per = max(1, chunk // down)
        y = np.empty(n_out)
        lead = 2 * half // down
        for m0 in range(0, n_out, per):
            m1 = min(n_out, m0 + per)
            s = m0 * down - half
            e = (m1 - 1) * down + half + 1
            lo_i, hi_i = max(s, 0), min(e, n_in)
            seg = np.zeros(e - s)
            seg[lo_i - s : hi_i - s] = trace.read(lo_i, hi_i - lo_i) * lo(lo_i, hi_i - lo_i)
            z = sps.upfirdn(h, seg, 1, down)
            y[m0:m1] = z[lead : lead + (m1 - m0)]
    return SignalTrace(
        y, output_rate, tone, t0, {"f_lo": f_lo, "group_delay": 0.0, "input_rate": fs}
    )


@dataclass
class Spectrum:
    frequency: np.ndarray  # Hz
    psd: np.ndarray  # one-sided, units^2 / Hz
    rbw: float  # Hz, sample_rate / segment_length
    enbw: float  # Hz, equivalent noise bandwidth of the window
    window: str
    segments: int
    variance: float  # of the analysed samples

    def bin_of(self, f: float) -> int:
        return int(round((f - self.frequency[0]) / self.rbw))

    @property
    def total_power(self) -> float:
        return float(np.sum(self.psd) * self.rbw)


WINDOWS = {"rectangular": "boxcar", "hann": "hann"}


def psd(trace: SignalTrace, window: str = "hann", segments: int = 1) -> Spectrum:
    """Welch average of one-sided periodograms over non-overlapping segments.

    The global mean is removed first. With the rectangular window,
    sum(psd) * rbw equals the variance of the analysed samples exactly.
    """
    if window not in WINDOWS:
        raise ValueError(f"window must be one of {sorted(WINDOWS)}")
    if segments < 1:
        raise ValueError("segments must be >= 1")
    n = len(trace)
    if n < 2 * segments:
        raise ValueError(f"trace of {n} samples is too short for {segments} segments")
    nper = n // segments
    x = trace.samples[: nper * segments]
    x = x - x.mean()
    f, p = sps.welch(
        x,
        fs=trace.sample_rate,
        window=WINDOWS[window],
        nperseg=nper,
        noverlap=0,
        detrend=False,
        scaling="density",
    )
    w = sps.get_window(WINDOWS[window], nper)
    enbw = trace.sample_rate * float(np.sum(w**2) / np.sum(w) ** 2)
    return Spectrum(f, p, trace.sample_rate / nper, enbw, window, segments, float(np.mean(x**2)))


@dataclass(frozen=True)
class LorentzianFit:
    center: float
    fwhm: float
    amplitude: float
    offset: float
    sigma_center: float
    sigma_fwhm: float
    sigma_amplitude: float
    sigma_offset: float
    rbw: float
    resolution_limited: bool  # FWHM is an upper bound set by the record length
    residual: float  # rms of fit residuals relative to the peak value

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class FitError(RuntimeError):
    def __init__(self, message, residual=math.nan):
        super().__init__(message)
        self.residual = residual


def lorentzian(f, f0, gamma, a, b):
    hw2 = 0.25 * gamma * gamma
    return a * hw2 / ((f - f0) ** 2 + hw2) + b


# a fitted width within this factor of the bin width is not resolved
RESOLUTION_FACTOR = 2.0
# A peak is fitted only if it exceeds the noise mean (median / ln 2 for a
# single-segment periodogram) by ln(n_bins) + PEAK_SIGNIFICANCE; pure white
# noise then passes with probability about exp(-PEAK_SIGNIFICANCE).
PEAK_SIGNIFICANCE = 10.0


def fit_lorentzian(
    spec: Spectrum, center: float | None = None, half_width: float | None = None
) -> LorentzianFit:
    """Least-squares Lorentzian fit around ``center`` (default: strongest bin).

    ``half_width`` (Hz) defaults to 20 bins. Frequencies are fitted in bin
    units around the peak and amplitudes relative to the peak value for
    conditioning.
    """
    f, p = spec.frequency, spec.psd
    if half_width is None:
        half_width = 20 * spec.rbw
    if center is None:
        k0 = int(np.argmax(p[1:]) + 1)
    else:
        k = spec.bin_of(center)
        lo, hi = max(k - 3, 0), min(k + 4, p.size)
        k0 = lo + int(np.argmax(p[lo:hi]))
    sel = np.abs(f - f[k0]) <= half_width
    if sel.sum() < 5:
        raise FitError("fewer than 5 bins inside the fit window")
    fx = (f[sel] - f[k0]) / spec.rbw
    scale = p[k0]
    if not scale > 0:
        raise FitError("no power at the peak bin")
    searched = p.size - 1 if center is None else 7
    need = (math.log(searched) + PEAK_SIGNIFICANCE) / math.log(2.0)
    floor = float(np.median(p[1:]))
    if scale < need * floor:
        raise FitError(f"no peak above the noise floor (peak/median {scale / floor:.3g}, need {need:.3g})")
    y = p[sel] / scale
    p0 = (0.0, 2.0, 1.0, float(np.median(y)))
    bounds = ([-half_width / spec.rbw, 1e-9, 0.0, -np.inf], [half_width / spec.rbw, np.inf, np.inf, np.inf])
    try:
        popt, pcov = optimize.curve_fit(lorentzian, fx, y, p0=p0, bounds=bounds, maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        resid = float(np.sqrt(np.mean((y - lorentzian(fx, *p0)) ** 2)))
        raise FitError(f"Lorentzian fit did not converge: {exc}", resid) from exc
    resid = float(np.sqrt(np.mean((y - lorentzian(fx, *popt)) ** 2)))
    if not np.all(np.isfinite(pcov)):
        pcov = np.full((4, 4), np.inf)
    sig = np.sqrt(np.clip(np.diag(pcov), 0.0, np.inf))
    f0 = f[k0] + popt[0] * spec.rbw
    gamma = abs(popt[1]) * spec.rbw
    if not (popt[2] > 0 and gamma > 0):
        raise FitError("fit collapsed to a non-positive peak", resid)
    return LorentzianFit(
        center=float(f0),
        fwhm=float(gamma),
        amplitude=float(popt[2] * scale),
        offset=float(popt[3] * scale),
        sigma_center=float(sig[0] * spec.rbw),
        sigma_fwhm=float(sig[1] * spec.rbw),
        sigma_amplitude=float(sig[2] * scale),
        sigma_offset=float(sig[3] * scale),
        rbw=spec.rbw,
        resolution_limited=bool(gamma <= RESOLUTION_FACTOR * spec.rbw),
        residual=resid,
    )


@dataclass
class PhaseNoiseCurve:
    offset: np.ndarray  # Hz from the carrier
    level: np.ndarray  # dBc/Hz
    carrier: float  # Hz, centre of the carrier bin
    side: str


def phase_noise(spec: Spectrum, carrier: float, side: str = "upper") -> PhaseNoiseCurve:
    """10 log10(PSD(f) / PSD(carrier)) against |f - carrier|."""
    k = spec.bin_of(carrier)
    if not 0 <= k < spec.psd.size:
        raise ValueError(f"carrier {carrier} Hz lies outside the spectrum")
    ref = spec.psd[k]
    if not ref > 0:
        raise ValueError("carrier bin holds no power")
    if side == "upper":
        sel = slice(k, None)
    elif side == "lower":
        sel = slice(None, k + 1)
    else:
        raise ValueError("side must be 'upper' or 'lower'")
    f = spec.frequency[sel]
    p = spec.psd[sel]
    if side == "lower":
        f, p = f[::-1], p[::-1]
    with np.errstate(divide="ignore"):
        level = 10.0 * np.log10(p / ref)
    level[0] = 0.0
    return PhaseNoiseCurve(np.abs(f - spec.frequency[k]), level, float(spec.frequency[k]), side)


def white_floor_dbc(noise_rms: float, sample_rate: float, tone_amplitude: float, enbw: float) -> float:
    """Expected dBc/Hz floor of additive white noise next to an on-bin tone."""
    noise_density = 2.0 * noise_rms**2 / sample_rate
    carrier_density = 0.5 * tone_amplitude**2 / enbw
    return 10.0 * math.log10(noise_density / carrier_density)


@dataclass
class LockinOutput:
    time: np.ndarray
    magnitude: np.ndarray  # RMS amplitude, A / sqrt(2) for A cos(...)
    phase: np.ndarray  # rad
    bandwidth: float  # Hz, 1 / (2 pi tau) per filter stage
    time_constant: float
    order: int

    @property
    def complex(self) -> np.ndarray:
        return self.magnitude * np.exp(1j * self.phase)


def lockin_demodulate(
    trace: SignalTrace,
    reference: float,
    time_constant: float,
    order: int = 1,
    output_rate: float | None = None,
) -> LockinOutput:
    """Dual-phase demodulation against cos(2 pi f_ref t) with absolute time.

    For an input A cos(2 pi f_ref t + phi0) the settled output is magnitude
    A / sqrt(2) and phase phi0. The low-pass is ``order`` cascaded
    first-order stages of time constant ``time_constant``; the output is
    decimated to about 10 / time_constant.
    """
    if not time_constant >= 2.0 / reference:
        raise ValueError("time_constant must be at least 2 / reference")
    if not reference < 0.5 * trace.sample_rate:
        raise ValueError("reference is above the trace Nyquist frequency")
    if order < 1:
        raise ValueError("order must be >= 1")
    fs = trace.sample_rate
    n = np.arange(len(trace))
    ph = np.mod(reference * trace.start_time + reference / fs * n, 1.0)
    z = math.sqrt(2.0) * trace.samples * np.exp(-2j * math.pi * ph)
    a = math.exp(-1.0 / (time_constant * fs))
    for _ in range(order):
        z = sps.lfilter([1.0 - a], [1.0, -a], z)
    rate = 10.0 / time_constant if output_rate is None else output_rate
    step = max(1, int(round(fs / rate)))
    idx = np.arange(step - 1, len(trace), step)
    zs = z[idx]
    return LockinOutput(
        trace.start_time + idx / fs,
        np.abs(zs),
        np.angle(zs),
        1.0 / (2.0 * math.pi * time_constant),
        time_constant,
        order,
    )


def settled_phase(out: LockinOutput, after: float) -> float:
    """Phase of the mean complex output for t >= ``after``."""
    sel = out.time >= after
    if not np.any(sel):
        raise ValueError("no lock-in output after the requested time")
    return float(np.angle(np.mean(out.complex[sel])))


def tone_phase(trace: SignalTrace, frequency: float) -> float:
    """Phase of cos(2 pi f t + phi) by projection on an integer number of cycles."""
    fs = trace.sample_rate
    n = np.arange(len(trace))
    ph = np.mod(frequency * trace.start_time + frequency / fs * n, 1.0)
    return float(np.angle(np.sum(trace.samples * np.exp(-2j * math.pi * ph))))
