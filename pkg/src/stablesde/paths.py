"""Controlled paths: turn an irregular, partially observed series into an
evaluable path X(t) with exact derivative.

Four interpolation schemes are supported: linear, rectilinear, natural cubic,
and Hermite cubic with backward differences. Channel 0 of every path is a
normalized clock, (t - t_0)/(t_n - t_0); it is linear by construction in every
scheme except rectilinear, whose whole point is to advance time and values in
alternation.

Every segment is stored as a cubic a + b s + c s^2 + d s^3 with s = t - knot,
so evaluation and differentiation are uniform across schemes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EmptyChannel, TooFewKnots

SCHEMES = ("linear", "rectilinear", "natural-cubic", "hermite-cubic-backward")


@dataclass
class IrregularSeries:
    times: np.ndarray          # (n,), strictly increasing
    values: np.ndarray         # (n, d_x)
    mask: np.ndarray           # (n, d_x) bool, True = observed
    label: Optional[int] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.values.shape != self.mask.shape or self.values.shape[0] != len(self.times):
            raise ValueError("values/mask shape mismatch")

    @property
    def n_channels(self):
        return self.values.shape[1]


@dataclass
class ControlledPath:
    knots: np.ndarray    # (m,)
    coeffs: np.ndarray   # (m-1, n_ch, 4) cubic coefficients per segment
    scheme: str

    @property
    def t0(self):
        return float(self.knots[0])

    @property
    def t_end(self):
        return float(self.knots[-1])


def fill_missing(series):
    """Complete value grid: linear interior fill, edge fill with nearest value."""
    n, d = series.values.shape
    out = np.empty((n, d))
    t = series.times
    for j in range(d):
        obs = series.mask[:, j]
        if not obs.any():
            raise EmptyChannel(f"channel {j} has no observations")
        idx = np.flatnonzero(obs)
        out[:, j] = np.interp(t, t[idx], series.values[idx, j])
    return out


def _linear_coeffs(t, y):
    dt = np.diff(t)
    slope = np.diff(y, axis=0) / dt[:, None]
    m = len(t) - 1
    c = np.zeros((m, y.shape[1], 4))
    c[:, :, 0] = y[:-1]
    c[:, :, 1] = slope
    return c


def natural_cubic_second_derivs(t, y):
    """Interior second derivatives of a natural cubic spline (ends fixed at 0).

    Solves the standard tridiagonal system with the Thomas algorithm.
    """
    n = len(t)
    h = np.diff(t)
    m2 = np.zeros_like(y)  # (n, n_ch)
    if n == 2:
        return m2
    # system for m2[1..n-2]
    a = h[:-1].copy()                    # sub-diagonal
    b = 2.0 * (h[:-1] + h[1:])           # diagonal
    c = h[1:].copy()                     # super-diagonal
    rhs = 6.0 * ((y[2:] - y[1:-1]) / h[1:, None] - (y[1:-1] - y[:-2]) / h[:-1, None])
    k = n - 2
    cp = np.zeros(k)
    dp = np.zeros((k, y.shape[1]))
    cp[0] = c[0] / b[0]
    dp[0] = rhs[0] / b[0]
    for i in range(1, k):
        denom = b[i] - a[i] * cp[i - 1]
        cp[i] = c[i] / denom
        dp[i] = (rhs[i] - a[i] * dp[i - 1]) / denom
    sol = np.zeros((k, y.shape[1]))
    sol[-1] = dp[-1]
    for i in range(k - 2, -1, -1):
        sol[i] = dp[i] - cp[i] * sol[i + 1]
    m2[1:-1] = sol
    return m2


def _natural_cubic_coeffs(t, y):
    h = np.diff(t)[:, None]
    m2 = natural_cubic_second_derivs(t, y)
    m = len(t) - 1
    c = np.zeros((m, y.shape[1], 4))
    c[:, :, 0] = y[:-1]
    c[:, :, 1] = (y[1:] - y[:-1]) / h - h * (2.0 * m2[:-1] + m2[1:]) / 6.0
    c[:, :, 2] = m2[:-1] / 2.0
    c[:, :, 3] = (m2[1:] - m2[:-1]) / (6.0 * h)
    return c


def _hermite_coeffs(t, y, slopes):
    """Cubic Hermite segments from knot values and knot slopes."""
    h = np.diff(t)[:, None]
    y0, y1 = y[:-1], y[1:]
    s0, s1 = slopes[:-1], slopes[1:]
    m = len(t) - 1
    c = np.zeros((m, y.shape[1], 4))
    c[:, :, 0] = y0
    c[:, :, 1] = s0
    c[:, :, 2] = (3.0 * (y1 - y0) / h - 2.0 * s0 - s1) / h
    c[:, :, 3] = (2.0 * (y0 - y1) / h + s0 + s1) / (h * h)
    return c


def _backward_slopes(t, y):
    slopes = np.zeros_like(y)
    slopes[1:] = np.diff(y, axis=0) / np.diff(t)[:, None]
    # first knot has no backward difference; slope pinned at 0
    return slopes


def _rectilinear(t, aug):
    """Doubled-knot staircase: first half advances the clock, second half the values."""
    n, d = aug.shape
    mids = (t[:-1] + t[1:]) / 2.0
    knots = np.empty(2 * n - 1)
    knots[0::2] = t
    knots[1::2] = mids
    vals = np.empty((2 * n - 1, d))
    vals[0::2] = aug
    vals[1::2, 0] = aug[1:, 0]   # clock already advanced at the midpoint
    vals[1::2, 1:] = aug[:-1, 1:]  # data still held at the left knot
    return knots, _linear_coeffs(knots, vals)


def build_path(series, scheme="natural-cubic"):
    """Build the augmented controlled path (clock channel prepended)."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if len(series.times) < 2:
        raise TooFewKnots("need at least two time points")
    values = fill_missing(series)
    t = series.times
    clock = (t - t[0]) / (t[-1] - t[0])
    aug = np.concatenate([clock[:, None], values], axis=1)

    if scheme == "rectilinear":
        knots, coeffs = _rectilinear(t, aug)
        return ControlledPath(knots, coeffs, scheme)

    if scheme == "linear":
        coeffs = _linear_coeffs(t, aug)
    elif scheme == "natural-cubic":
        coeffs = _natural_cubic_coeffs(t, aug)
    else:  # hermite-cubic-backward
        slopes = _backward_slopes(t, values)
        coeffs = _hermite_coeffs(t, values, slopes)
        # clock channel stays exactly linear; splice its segments in front
        clock_c = _linear_coeffs(t, clock[:, None])
        coeffs = np.concatenate([clock_c, coeffs], axis=1)
    return ControlledPath(t.copy(), coeffs, scheme)


def _segment_index(path, t):
    t = np.clip(t, path.knots[0], path.knots[-1])
    i = int(np.searchsorted(path.knots, t, side="right")) - 1
    return min(max(i, 0), len(path.knots) - 2), t


def eval_path(path, t):
    """X(t), clamped to [t_0, t_n]; at interior knots the right segment is used."""
    i, t = _segment_index(path, t)
    s = t - path.knots[i]
    c = path.coeffs[i]
    return c[:, 0] + s * (c[:, 1] + s * (c[:, 2] + s * c[:, 3]))


def deriv_path(path, t):
    """dX/dt at t, the exact piecewise derivative of eval_path."""
    i, t = _segment_index(path, t)
    s = t - path.knots[i]
    c = path.coeffs[i]
    return c[:, 1] + s * (2.0 * c[:, 2] + 3.0 * s * c[:, 3])


def eval_grid(path, times):
    """Vectorized eval over a grid; (len(times), d_x + 1)."""
    return np.stack([eval_path(path, float(t)) for t in times])


def deriv_grid(path, times):
    return np.stack([deriv_path(path, float(t)) for t in times])
