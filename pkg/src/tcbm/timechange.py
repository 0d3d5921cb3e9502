"""Time-change paths: construction, sampling, evaluation and inversion.

A path is stored as breakpoints ``times[i]`` with a left value and a right
value at each breakpoint.  Between consecutive breakpoints the path
interpolates linearly from ``right_values[i]`` to ``left_values[i+1]``; a
breakpoint with ``right > left`` is a jump.  This dual representation keeps
left limits exact instead of numerically estimated, which the backward
change-of-variable machinery relies on.

Tabulated monotone segments are supported by supplying one breakpoint per
sample (piecewise-linear in between).
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng as _rng
from .errors import (InvalidConfig, InvalidPath, NonMonotone, NonzeroOrigin,
                     OutOfDomain, RangeExceeded, TooManyJumps)

MAX_JUMPS = 32
EPS_MIN = 1e-3  # default slope floor for strictly increasing sampling


@dataclass(frozen=True)
class TimeChangePath:
    times: np.ndarray
    left_values: np.ndarray
    right_values: np.ndarray
    range_end: float
    strictly_increasing: bool

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    @classmethod
    def from_breakpoints(cls, times, left_values, right_values, range_end,
                         origin_zero=True, max_jumps=MAX_JUMPS):
        """Validate and build a path from breakpoint triples."""
        ts = np.asarray(times, dtype=float)
        lv = np.asarray(left_values, dtype=float)
        rv = np.asarray(right_values, dtype=float)
        if ts.ndim != 1 or ts.shape != lv.shape or ts.shape != rv.shape:
            raise InvalidPath("times/left/right arrays must be 1-d and equal length")
        if len(ts) < 2:
            raise InvalidPath("need at least two breakpoints")
        if ts[0] != 0.0:
            raise NonzeroOrigin(f"first breakpoint at t={ts[0]}, expected 0")
        if np.any(np.diff(ts) <= 0):
            raise NonMonotone("breakpoint times must be strictly increasing")
        if origin_zero and (lv[0] != 0.0 or rv[0] != 0.0):
            raise NonzeroOrigin(f"path must start at 0, got {rv[0]}")
        if np.any(rv < lv):
            raise NonMonotone("right value below left value at a breakpoint")
        if np.any(lv[1:] < rv[:-1]):
            raise NonMonotone("decreasing continuous segment")
        if rv[-1] > range_end + 1e-12:
            raise RangeExceeded(f"terminal value {rv[-1]} exceeds range end {range_end}")
        n_jumps = int(np.sum(rv > lv))
        if max_jumps is not None and n_jumps > max_jumps:
            raise TooManyJumps(f"{n_jumps} jumps exceeds cap {max_jumps}")
        strict = bool(np.all(lv[1:] > rv[:-1]))
        ts.setflags(write=False)
        lv.setflags(write=False)
        rv.setflags(write=False)
        return cls(ts, lv, rv, float(range_end), strict)

    @property
    def domain_end(self) -> float:
        return float(self.times[-1])

    @property
    def final_value(self) -> float:
        return float(self.right_values[-1])

    @property
    def jump_times(self) -> np.ndarray:
        return self.times[self.right_values > self.left_values]

    @property
    def jumps(self):
        """List of (time, left value, right value) for each jump."""
        mask = self.right_values > self.left_values
        return list(zip(self.times[mask], self.left_values[mask],
                        self.right_values[mask]))

    @property
    def segments(self):
        """Continuous pieces as (start, end, start value, end value)."""
        out = []
        for i in range(len(self.times) - 1):
            out.append((float(self.times[i]), float(self.times[i + 1]),
                        float(self.right_values[i]), float(self.left_values[i + 1])))
        return out

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------

    def eval(self, t):
        """Right-continuous value at ``t`` (scalar or array)."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if t_arr.size and (t_arr.min() < -1e-12 or t_arr.max() > self.domain_end + 1e-12):
            raise OutOfDomain(f"time outside [0, {self.domain_end}]")
        tc = np.clip(t_arr, 0.0, self.domain_end)
        i = np.searchsorted(self.times, tc, side="right") - 1
        i = np.clip(i, 0, len(self.times) - 2)
        seg = self.times[i + 1] - self.times[i]
        w = (tc - self.times[i]) / seg
        val = self.right_values[i] + w * (self.left_values[i + 1] - self.right_values[i])
        val = np.where(tc >= self.times[-1], self.right_values[-1], val)
        return val if np.ndim(t) else float(val[0])

    def left_limit(self, t):
        """Left limit at ``t``; at t=0 returns the origin value."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if t_arr.size and (t_arr.min() < -1e-12 or t_arr.max() > self.domain_end + 1e-12):
            raise OutOfDomain(f"time outside [0, {self.domain_end}]")
        tc = np.clip(t_arr, 0.0, self.domain_end)
        j = np.searchsorted(self.times, tc, side="left")
        j = np.clip(j, 0, len(self.times) - 1)
        exact = self.times[j] == tc
        i = np.clip(j - 1, 0, len(self.times) - 2)
        seg = self.times[i + 1] - self.times[i]
        w = (tc - self.times[i]) / seg
        interp = self.right_values[i] + w * (self.left_values[i + 1] - self.right_values[i])
        val = np.where(exact, self.left_values[j], interp)
        return val if np.ndim(t) else float(val[0])

    # ------------------------------------------------------------------
    # inversion
    # ------------------------------------------------------------------

    def inverse(self) -> "TimeChangePath":
        """Generalized inverse: first passage above each level.

        Continuous strictly-increasing pieces invert to pieces, jumps become
        flats, flats become jumps; on [final value, range_end] the inverse
        sits at the domain end.  The construction is exact on the breakpoint
        representation.
        """
        ts, lv, rv = self.times, self.left_values, self.right_values
        r_list = [0.0]
        tl = [0.0]
        tr = [0.0]

        def add(r, t):
            if r > r_list[-1]:
                r_list.append(r)
                tl.append(t)
                tr.append(t)
            elif t > tr[-1]:
                tr[-1] = t

        for i in range(len(ts)):
            if rv[i] > lv[i]:  # jump of the path -> flat piece of the inverse
                add(float(lv[i]), float(ts[i]))
                add(float(rv[i]), float(ts[i]))
            if i < len(ts) - 1:
                add(float(rv[i]), float(ts[i]))
                add(float(lv[i + 1]), float(ts[i + 1]))
        add(self.final_value, self.domain_end)
        if self.range_end > self.final_value:
            add(self.range_end, self.domain_end)
        return TimeChangePath.from_breakpoints(
            r_list, tl, tr, range_end=self.domain_end,
            origin_zero=False, max_jumps=None)

    # ------------------------------------------------------------------
    # export
    # ------------------------------------------------------------------

    def to_csv_rows(self):
        """Rows (t, value, is_jump_left, is_jump_right)."""
        rows = []
        for t, a, b in zip(self.times, self.left_values, self.right_values):
            if b > a:
                rows.append((float(t), float(a), 1, 0))
                rows.append((float(t), float(b), 0, 1))
            else:
                rows.append((float(t), float(b), 0, 0))
        return rows


# ----------------------------------------------------------------------
# deterministic builders
# ----------------------------------------------------------------------

def affine(slope: float, horizon: float, range_end: Optional[float] = None) -> TimeChangePath:
    """The path t -> slope * t on [0, horizon]."""
    if slope < 0:
        raise NonMonotone("negative slope")
    end = slope * horizon
    if range_end is None:
        range_end = end
    return TimeChangePath.from_breakpoints(
        [0.0, horizon], [0.0, end], [0.0, end], range_end)


def identity(horizon: float, range_end: Optional[float] = None) -> TimeChangePath:
    return affine(1.0, horizon, range_end)


def build_deterministic(horizon: float, range_end: float, slope: float = 1.0,
                        jumps: Sequence = ()) -> TimeChangePath:
    """Drift ``slope * t`` plus finitely many jumps ``(time, size)``."""
    jumps = sorted(jumps)
    for tau, size in jumps:
        if not (0.0 < tau <= horizon):
            raise InvalidPath(f"jump time {tau} outside (0, {horizon}]")
        if size <= 0:
            raise NonMonotone(f"jump size {size} must be positive")
    ts = [0.0]
    lv = [0.0]
    rv = [0.0]
    acc = 0.0
    for tau, size in jumps:
        ts.append(float(tau))
        lv.append(slope * tau + acc)
        acc += size
        rv.append(slope * tau + acc)
    if not ts or ts[-1] < horizon:
        ts.append(float(horizon))
        lv.append(slope * horizon + acc)
        rv.append(slope * horizon + acc)
    return TimeChangePath.from_breakpoints(ts, lv, rv, range_end)


def from_samples(times, values, range_end) -> TimeChangePath:
    """Continuous tabulated monotone path (piecewise linear between samples)."""
    ts = np.asarray(times, dtype=float)
    vs = np.asarray(values, dtype=float)
    return TimeChangePath.from_breakpoints(ts, vs, vs, range_end)


# ----------------------------------------------------------------------
# random sampling
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class TimeChangeConfig:
    """Law of the sampled time-change: linear drift plus finitely many jumps.

    ``jump_count`` fixes the number of jumps; alternatively ``poisson_rate``
    draws the count Poisson and truncates it at ``n_max``.  Jump times are
    uniform on (0, horizon) with a minimum separation of ``min_jump_gap``
    (enforced by resampling), sizes are i.i.d. exponential or uniform.
    """
    horizon: float = 1.0
    range_end: float = 8.0
    drift_slope: float = 1.0
    jump_count: Optional[int] = None
    poisson_rate: Optional[float] = None
    jump_size_dist: str = "exponential"
    jump_size_mean: float = 0.25
    jump_size_low: float = 0.1
    jump_size_high: float = 0.5
    min_jump_gap: float = 0.02
    n_max: int = MAX_JUMPS

    def validate(self):
        if self.horizon <= 0 or self.range_end <= 0:
            raise InvalidConfig("horizons must be positive")
        if self.drift_slope < 0:
            raise InvalidConfig("drift slope must be >= 0")
        if self.jump_count is not None and self.poisson_rate is not None:
            raise InvalidConfig("give jump_count or poisson_rate, not both")
        if self.jump_count is not None and not (0 <= self.jump_count <= self.n_max):
            raise InvalidConfig(f"jump_count outside [0, {self.n_max}]")
        if self.jump_size_dist not in ("exponential", "uniform"):
            raise InvalidConfig(f"unknown jump size law {self.jump_size_dist!r}")
        if self.jump_size_dist == "exponential" and self.jump_size_mean <= 0:
            raise InvalidConfig("exponential jump mean must be positive")
        if self.jump_size_dist == "uniform" and not (0 < self.jump_size_low <= self.jump_size_high):
            raise InvalidConfig("uniform jump bounds must satisfy 0 < low <= high")
        if self.drift_slope * self.horizon > self.range_end:
            raise InvalidConfig("drift alone exceeds the range end")

    @property
    def mean_final_value(self) -> float:
        """E[path value at the horizon] implied by the sampler parameters."""
        if self.jump_count is not None:
            n = float(self.jump_count)
        elif self.poisson_rate is not None:
            n = float(self.poisson_rate)  # truncation bias negligible below n_max
        else:
            n = 0.0
        if self.jump_size_dist == "exponential":
            mean_size = self.jump_size_mean
        else:
            mean_size = 0.5 * (self.jump_size_low + self.jump_size_high)
        return self.drift_slope * self.horizon + n * mean_size


def sample_timechange(config: TimeChangeConfig, seed: int,
                      path_index: int = 0) -> TimeChangePath:
    """Draw one path; a pure function of (config, seed, path_index)."""
    config.validate()
    gen = _rng.stream(seed, path_index, _rng.STREAM_LAMBDA)

    if config.jump_count is not None:
        n = config.jump_count
    elif config.poisson_rate is not None:
        n = min(int(gen.poisson(config.poisson_rate)), config.n_max)
    else:
        n = 0

    T = config.horizon
    gap = config.min_jump_gap
    for _ in range(1000):
        if n == 0:
            taus = np.empty(0)
            sizes = np.empty(0)
        else:
            taus = np.sort(gen.uniform(0.0, T, size=n))
            if config.jump_size_dist == "exponential":
                sizes = gen.exponential(config.jump_size_mean, size=n)
            else:
                sizes = gen.uniform(config.jump_size_low, config.jump_size_high, size=n)
            bounds = np.concatenate(([0.0], taus, [T]))
            if np.min(np.diff(bounds)) < gap:
                continue  # resample: jumps too close to each other or the ends
        if config.drift_slope * T + sizes.sum() > config.range_end:
            continue  # keep the path inside [0, range_end]
        return build_deterministic(T, config.range_end, config.drift_slope,
                                   list(zip(taus, sizes)))
    raise InvalidConfig("could not sample a valid path in 1000 attempts; "
                        "check min_jump_gap / range_end")
