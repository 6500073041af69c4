"""Sampling detector click times from a no-count rate profile.

The detection rate R(t) of the cascade has an early interference dip;
clicks before it carry almost no phonon information, so a detection time
is drawn from the window starting just after the dip. The window is the
physically useful support of R: it ends once the rate has decayed to a
small fraction of its peak.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NoDipError, ZeroRateError
from .fock import _frozen


@dataclass(frozen=True)
class RateProfile:
    """Detection rate and survival probability on a time grid from t = 0."""

    times: np.ndarray
    rates: np.ndarray
    survival: np.ndarray

    def __post_init__(self):
        t = _frozen(np.asarray(self.times, dtype=float))
        r = _frozen(np.asarray(self.rates, dtype=float))
        s = _frozen(np.asarray(self.survival, dtype=float))
        if t.ndim != 1 or t.shape != r.shape or t.shape != s.shape:
            raise ValueError("times, rates and survival must be equal-length 1d arrays")
        if len(t) < 3:
            raise ValueError("profile needs at least 3 points")
        if abs(t[0]) > 1e-12:
            raise ValueError("profile must start at t = 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(r < -1e-12):
            raise ValueError("rates must be non-negative")
        if np.any(np.diff(s) > 1e-12):
            raise ValueError("survival must be non-increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "rates", np.maximum(r, 0.0))
        object.__setattr__(self, "survival", s)


@dataclass(frozen=True)
class SamplingWindow:
    """Half-open time window [t_start, t_end] with its share of ∫R dt."""

    t_start: float
    t_end: float
    in_window_mass: float
    total_mass: float

    def __post_init__(self):
        if not (0 <= self.t_start < self.t_end):
            raise ValueError("need 0 <= t_start < t_end")

    @property
    def discarded_fraction(self) -> float:
        if self.total_mass <= 0:
            return 0.0
        return 1.0 - self.in_window_mass / self.total_mass


def dip_index(rates: np.ndarray, prominence: float = 1e-6) -> int:
    """Index of the first interior local minimum of the rate curve.

    A minimum counts only if the curve later rebounds above it by
    prominence * max(rates); grid-level wiggle at the tail does not.
    Raises NoDipError when the profile decays monotonically.
    """
    r = np.asarray(rates, dtype=float)
    rmax = float(r.max())
    if rmax <= 0:
        raise NoDipError("rate profile is identically zero")
    lift = prominence * rmax
    # candidate interior minima: r[i] <= both neighbours
    interior = np.nonzero((r[1:-1] <= r[:-2]) & (r[1:-1] <= r[2:]))[0] + 1
    running_max_after = np.maximum.accumulate(r[::-1])[::-1]
    for i in interior:
        if i + 1 < len(r) and running_max_after[i + 1] > r[i] + lift:
            return int(i)
    raise NoDipError("no interior rate minimum with the required prominence")


def refine_dip_time(times: np.ndarray, rates: np.ndarray, i: int) -> float:
    """Parabolic refinement of a grid minimum at index i."""
    if i <= 0 or i >= len(times) - 1:
        return float(times[i])
    t0, t1, t2 = times[i - 1], times[i], times[i + 1]
    r0, r1, r2 = rates[i - 1], rates[i], rates[i + 1]
    denom = (r0 - 2.0 * r1 + r2)
    if denom <= 0:
        return float(t1)
    shift = 0.5 * (r0 - r2) / denom
    shift = float(np.clip(shift, -1.0, 1.0))
    return float(t1 + shift * (t1 - t0))


def dip_time(profile: RateProfile, prominence: float = 1e-6) -> float:
    """Location of the interference dip, refined below the grid spacing."""
    i = dip_index(profile.rates, prominence)
    return refine_dip_time(profile.times, profile.rates, i)


def _cumulative_mass(times: np.ndarray, rates: np.ndarray) -> np.ndarray:
    inc = 0.5 * (rates[1:] + rates[:-1]) * np.diff(times)
    return np.concatenate([[0.0], np.cumsum(inc)])


def find_window(profile: RateProfile, delta: float = 0.05,
                epsilon: float = 1e-3) -> SamplingWindow:
    """Sampling window: from just after the dip until the rate is nearly zero.

    t_start is the dip time plus delta. t_end is the first grid time past
    the post-dip maximum where R < epsilon * max(R); measuring from the
    rebound peak keeps the dip bottom itself (where R can also be tiny)
    from closing the window immediately. If R never falls that low the
    window runs to the end of the grid.
    """
    t = profile.times
    r = profile.rates
    i_dip = dip_index(r)
    t_start = refine_dip_time(t, r, i_dip) + delta
    i_start = int(np.searchsorted(t, t_start))
    if i_start >= len(t) - 1:
        raise NoDipError("dip sits at the end of the stored grid; extend it")
    rmax = float(r.max())
    i_peak = i_start + int(np.argmax(r[i_start:]))
    below = np.nonzero(r[i_peak:] < epsilon * rmax)[0]
    i_end = i_peak + int(below[0]) if len(below) else len(t) - 1
    if i_end <= i_start:
        i_end = len(t) - 1
    t_end = float(t[i_end])

    cum = _cumulative_mass(t, r)
    total = float(cum[-1])
    mass = float(np.interp(t_end, t, cum) - np.interp(t_start, t, cum))
    if mass <= 0:
        raise ZeroRateError("no detection-rate mass inside the sampling window")
    return SamplingWindow(t_start, t_end, mass, total)


def sample_detection_time(profile: RateProfile, window: SamplingWindow,
                          rng: np.random.Generator) -> float:
    """Draw a click time from R(t) restricted to the window.

    Inverse-CDF on the trapezoid-integrated rate: the target mass is
    located with searchsorted, then the crossing inside one grid cell is
    solved exactly for the linearly interpolated rate (quadratic in the
    offset).
    """
    t = profile.times
    r = profile.rates
    cum = _cumulative_mass(t, r)
    lo = float(np.interp(window.t_start, t, cum))
    hi = float(np.interp(window.t_end, t, cum))
    if hi <= lo:
        raise ZeroRateError("sampling window carries no rate mass")
    target = lo + rng.random() * (hi - lo)
    k = int(np.searchsorted(cum, target, side="right")) - 1
    k = min(max(k, 0), len(t) - 2)
    # inside cell k: mass(s) = r_k s + (r_{k+1}-r_k) s^2/(2h), 0 <= s <= h
    h = t[k + 1] - t[k]
    need = target - cum[k]
    a = (r[k + 1] - r[k]) / (2.0 * h)
    b = r[k]
    if abs(a) < 1e-300:
        s = need / b if b > 0 else 0.0
    else:
        disc = b * b + 4.0 * a * need
        s = (-b + np.sqrt(max(disc, 0.0))) / (2.0 * a)
        if not (0.0 <= s <= h * (1 + 1e-9)):
            s = need / b if b > 0 else 0.5 * h
    t_r = float(t[k] + min(max(s, 0.0), h))
    return float(min(max(t_r, window.t_start), window.t_end))
