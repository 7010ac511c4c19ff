"""Compiled inner loops for the piecewise-smooth rotor equation."""

import math

from numba import njit


@njit(cache=True)
def rk4_advance(alpha, omega, damping, torque, potential, extra, circular, dt, nsteps):
    """Classical RK4 over ``nsteps`` steps of one constant-polarization interval.

    Acceleration is ``-damping*omega + torque + extra`` (circular) or
    ``-damping*omega - potential*sin(2 alpha) + extra`` (linear); all
    accelerations are already divided by the inertia.
    """
    a = alpha
    w = omega
    half = 0.5 * dt
    sixth = dt / 6.0
    if circular:
        drive = torque + extra
        for _ in range(nsteps):
            k1w = drive - damping * w
            w2 = w + half * k1w
            k2w = drive - damping * w2
            w3 = w + half * k2w
            k3w = drive - damping * w3
            w4 = w + dt * k3w
            k4w = drive - damping * w4
            a += sixth * (w + 2.0 * w2 + 2.0 * w3 + w4)
            w += sixth * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
    else:
        for _ in range(nsteps):
            k1w = extra - damping * w - potential * math.sin(2.0 * a)
            a2 = a + half * w
            w2 = w + half * k1w
            k2w = extra - damping * w2 - potential * math.sin(2.0 * a2)
            a3 = a + half * w2
            w3 = w + half * k2w
            k3w = extra - damping * w3 - potential * math.sin(2.0 * a3)
            a4 = a + dt * w3
            w4 = w + dt * k3w
            k4w = extra - damping * w4 - potential * math.sin(2.0 * a4)
            a += sixth * (w + 2.0 * w2 + 2.0 * w3 + w4)
            w += sixth * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
    return a, w


@njit(cache=True)
def integrate_periods(
    alpha,
    omega,
    seg_frac,
    seg_circular,
    seg_steps,
    period,
    damping,
    torque,
    potential,
    extra,
    stride,
    rec_alpha,
    rec_omega,
):
    """Integrate ``len(period)`` drive periods built from a fixed segment template.

    Per-period arrays (``period``, ``damping``, ``torque``, ``potential``,
    ``extra``) allow parameters to change from one period to the next. The
    state is recorded every ``stride`` steps (``stride <= 0`` records nothing).

    Returns ``(alpha, omega, n_recorded, completed_periods)``; if the state
    becomes non-finite the last finite period-boundary state is returned and
    ``completed_periods`` is smaller than the requested count.
    """
    n_rec = 0
    count = 0
    nseg = seg_frac.shape[0]
    for p in range(period.shape[0]):
        a0 = alpha
        w0 = omega
        rec0 = n_rec
        for s in range(nseg):
            ns = seg_steps[s]
            dt = seg_frac[s] * period[p] / ns
            if stride <= 0:
                alpha, omega = rk4_advance(
                    alpha, omega, damping[p], torque[p], potential[p], extra[p],
                    seg_circular[s], dt, ns,
                )
                count += ns
                continue
            for _ in range(ns):
                alpha, omega = rk4_advance(
                    alpha, omega, damping[p], torque[p], potential[p], extra[p],
                    seg_circular[s], dt, 1,
                )
                count += 1
                if count % stride == 0:
                    rec_alpha[n_rec] = alpha
                    rec_omega[n_rec] = omega
                    n_rec += 1
        if not (math.isfinite(alpha) and math.isfinite(omega)):
            return a0, w0, rec0, p
    return alpha, omega, n_rec, period.shape[0]
