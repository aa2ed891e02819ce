"""Exact algebra for periodic piecewise-constant waveforms.

A waveform is a list of transitions (time as a fraction of the period, new
level) with cyclic wrap-around: the last level holds from the last transition
through the end of the period and on to the first transition.  Everything
downstream — LO spectra, harmonic-rejection ratios, error sensing — reduces to
exact operations on these edge lists; no time-domain sampling grids anywhere.

Fourier convention: x(t) = sum_n c_n exp(+j 2 pi n t / T), so for n != 0

    c_n = (1 / (j 2 pi n)) * sum_edges dlevel_e * exp(-j 2 pi n t_e)

with t_e in period fractions and dlevel_e the level step at the edge.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mismatch import ConfigError

__all__ = [
    "EdgeWaveform",
    "square_wave",
    "combine",
    "fourier_coeff",
    "fourier_coeffs",
    "edge_fourier",
    "product_average",
]


@dataclass(frozen=True, eq=False)
class EdgeWaveform:
    """Periodic piecewise-constant waveform given by its transitions.

    ``times`` are strictly increasing fractions in [0, 1); ``levels[i]`` is the
    value right after ``times[i]``.  With no transitions the waveform is the
    constant ``dc``.
    """

    period: float
    times: np.ndarray
    levels: np.ndarray
    dc: float = 0.0

    def __post_init__(self) -> None:
        if self.period <= 0:
            raise ConfigError(f"period must be > 0, got {self.period}")
        t, l = np.asarray(self.times, float), np.asarray(self.levels, float)
        if t.shape != l.shape or t.ndim != 1:
            raise ConfigError("times and levels must be 1-D arrays of equal length")
        if t.size:
            if np.any(t < 0.0) or np.any(t >= 1.0):
                raise ConfigError("transition times must lie in [0, 1)")
            if np.any(np.diff(t) <= 0.0):
                raise ConfigError("transition times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "levels", l)

    @property
    def n_edges(self) -> int:
        return int(self.times.size)

    def value(self, t_frac) -> np.ndarray:
        """Waveform level at time fraction(s) t (taken modulo 1)."""
        t = np.mod(np.asarray(t_frac, dtype=float), 1.0)
        if self.times.size == 0:
            return np.full_like(t, self.dc)
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.levels[idx]  # idx == -1 wraps to the last level

    def mean(self) -> float:
        """Exact DC value (the n=0 Fourier coefficient)."""
        if self.times.size == 0:
            return float(self.dc)
        t, l = self.times, self.levels
        durations = np.empty_like(t)
        durations[:-1] = np.diff(t)
        durations[-1] = 1.0 - t[-1] + t[0]
        return float(np.dot(l, durations))

    def shifted(self, dt_frac: float) -> "EdgeWaveform":
        """Cyclic time shift by dt (fraction of a period)."""
        if self.times.size == 0:
            return self
        t = np.mod(self.times + dt_frac, 1.0)
        order = np.argsort(t, kind="stable")
        return EdgeWaveform(self.period, t[order], self.levels[order], self.dc)

    def scaled(self, gain: float) -> "EdgeWaveform":
        return EdgeWaveform(self.period, self.times, self.levels * gain, self.dc * gain)


def square_wave(
    period: float, rise_frac: float, fall_frac: float, low: float = 0.0, high: float = 1.0
) -> EdgeWaveform:
    """Rectangular wave: ``high`` from rise to fall (cyclically), ``low`` elsewhere.

    rise and fall are period fractions (any reals; reduced modulo 1).  Equal
    rise/fall (mod 1) would be a zero-width pulse and is rejected.
    """
    r, f = float(np.mod(rise_frac, 1.0)), float(np.mod(fall_frac, 1.0))
    if r == f:
        raise ConfigError("square_wave needs distinct rise/fall times")
    if r < f:
        times, levels = np.array([r, f]), np.array([high, low])
    else:
        times, levels = np.array([f, r]), np.array([low, high])
    return EdgeWaveform(period, times, levels)


def combine(waveforms: Sequence[EdgeWaveform], weights: Sequence[float]) -> EdgeWaveform:
    """Weighted sum of waveforms sharing one period, as an exact edge list.

    Levels are evaluated on the union of transition times; edges where the
    combined level does not change are dropped.
    """
    if not waveforms:
        raise ConfigError("combine needs at least one waveform")
    period = waveforms[0].period
    for w in waveforms[1:]:
        if w.period != period:
            raise ConfigError("combine requires a common period")
    all_times = np.unique(
        np.concatenate([w.times for w in waveforms if w.times.size] or [np.empty(0)])
    )
    if all_times.size == 0:
        dc = float(sum(g * w.dc for g, w in zip(weights, waveforms)))
        return EdgeWaveform(period, np.empty(0), np.empty(0), dc)
    levels = np.zeros_like(all_times)
    for g, w in zip(weights, waveforms):
        levels += g * w.value(all_times)
    keep = levels != np.roll(levels, 1)
    if not np.any(keep):  # combination is constant
        return EdgeWaveform(period, np.empty(0), np.empty(0), float(levels[0]))
    return EdgeWaveform(period, all_times[keep], levels[keep])


def edge_fourier(times, deltas, n) -> np.ndarray:
    """Fourier coefficients of edge lists: (1/(j 2 pi n)) * sum d * exp(-j 2 pi n t).

    ``times``/``deltas`` may be batched with shape (..., E); ``n`` is a positive
    integer (scalar).  This is the hot path used by calibration searches, which
    evaluate thousands of candidate edge lists at once.
    """
    times = np.asarray(times, dtype=float)
    phase = np.exp((-2j * np.pi * n) * times)
    return (phase * deltas).sum(axis=-1) / (2j * np.pi * n)


def fourier_coeff(waveform: EdgeWaveform, n: int) -> complex:
    """Exact complex Fourier coefficient c_n (n >= 0) of the waveform."""
    if n < 0:
        raise ConfigError("n must be >= 0 (c_{-n} is the conjugate of c_n)")
    if n == 0:
        return complex(waveform.mean())
    if waveform.times.size == 0:
        return 0j
    deltas = waveform.levels - np.roll(waveform.levels, 1)
    return complex(edge_fourier(waveform.times, deltas, n))


def fourier_coeffs(waveform: EdgeWaveform, ns: Sequence[int]) -> np.ndarray:
    return np.array([fourier_coeff(waveform, int(n)) for n in ns])


def product_average(a: EdgeWaveform, b: EdgeWaveform) -> float:
    """Exact period-average of the product a(t) * b(t).

    Both waveforms are evaluated on the union of their transition times; the
    product is constant on every resulting segment, so the average is an exact
    finite sum (no quadrature).
    """
    if a.period != b.period:
        raise ConfigError("product_average requires a common period")
    cuts = np.unique(np.concatenate([a.times, b.times]))
    if cuts.size == 0:
        return a.dc * b.dc
    la, lb = a.value(cuts), b.value(cuts)
    durations = np.empty_like(cuts)
    durations[:-1] = np.diff(cuts)
    durations[-1] = 1.0 - cuts[-1] + cuts[0]
    return float(np.dot(la * lb, durations))
