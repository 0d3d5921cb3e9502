"""Brownian driver on the market clock and the time-changed motion.

A ``BrownianPath`` is materialized lazily: values exist only at the times
some consumer asked for (time-change images, integration grids, jump left
limits).  Refinement inserts new samples from the Brownian-bridge
conditional law given the stored neighbours and never changes values
already stored, so integrals computed before and after extra refinement
see the same randomness.
"""

from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .errors import GridMissingJump, GridNotRefined, UnsortedTimes
from .timechange import TimeChangePath

# Times closer than this are treated as the same sample point.  Genuine grid
# spacings in the toolkit are >= slope_min * dt ~ 1e-6; float round-trip noise
# through eval/left_limit is ~1e-15.
TIME_ATOL = 1e-10


class BrownianPath:
    """Sorted (time, value) samples of one Brownian path on [0, horizon]."""

    def __init__(self, horizon, rng=None, seed=None, path_index=0):
        if rng is None:
            rng = _rng.stream(0 if seed is None else seed, path_index, _rng.STREAM_W)
        self.horizon = float(horizon)
        self._rng = rng
        self._times = np.array([0.0])
        self._values = np.array([0.0])

    @classmethod
    def sample(cls, times, horizon=None, rng=None, seed=None, path_index=0):
        """Fresh path with independent Gaussian increments at ``times``."""
        times = np.asarray(times, dtype=float)
        if times.size and (np.any(np.diff(times) <= 0) or times[0] <= 0):
            raise UnsortedTimes("times must be strictly increasing and positive")
        if horizon is None:
            horizon = times[-1] if times.size else 1.0
        path = cls(horizon, rng=rng, seed=seed, path_index=path_index)
        path.refine(times)
        return path

    @property
    def times(self):
        return self._times.copy()

    @property
    def values(self):
        return self._values.copy()

    # ------------------------------------------------------------------

    def _locate(self, times):
        """Index of each time among stored samples, -1 where absent."""
        t = np.asarray(times, dtype=float)
        idx = np.searchsorted(self._times, t)
        idx = np.clip(idx, 0, len(self._times) - 1)
        left = np.clip(idx - 1, 0, len(self._times) - 1)
        pick_left = np.abs(self._times[left] - t) < np.abs(self._times[idx] - t)
        nearest = np.where(pick_left, left, idx)
        ok = np.abs(self._times[nearest] - t) <= TIME_ATOL
        return np.where(ok, nearest, -1)

    def refine(self, new_times):
        """Insert samples at ``new_times`` (idempotent for stored times)."""
        t = np.unique(np.asarray(new_times, dtype=float))
        t = t[(t > TIME_ATOL) & (t <= self.horizon + TIME_ATOL)]
        if t.size == 0:
            return self
        t = t[np.concatenate(([True], np.diff(t) > TIME_ATOL))]
        t = t[self._locate(t) < 0]
        if t.size == 0:
            return self

        tail = t[t > self._times[-1]]
        inner = t[t <= self._times[-1]]

        add_t = []
        add_v = []
        if inner.size:
            iv = np.searchsorted(self._times, inner, side="right") - 1
            a = self._times[iv]
            b = self._times[iv + 1]
            wa = self._values[iv]
            wb = self._values[iv + 1]
            # process intervals in order; single insertions vectorize,
            # multiple points in one interval use a joint bridge draw
            order = np.argsort(iv, kind="stable")
            inner, iv, a, b, wa, wb = (x[order] for x in (inner, iv, a, b, wa, wb))
            uniq, starts = np.unique(iv, return_index=True)
            counts = np.diff(np.append(starts, len(iv)))
            single = counts == 1
            s_idx = starts[single]
            if s_idx.size:
                m, aa, bb = inner[s_idx], a[s_idx], b[s_idx]
                mean = wa[s_idx] + (m - aa) / (bb - aa) * (wb[s_idx] - wa[s_idx])
                var = (m - aa) * (bb - m) / (bb - aa)
                vals = mean + np.sqrt(np.maximum(var, 0.0)) * self._rng.standard_normal(m.size)
                add_t.append(m)
                add_v.append(vals)
            for k in np.flatnonzero(~single):
                sl = slice(starts[k], starts[k] + counts[k])
                m = inner[sl]
                aa, bb = a[starts[k]], b[starts[k]]
                waa, wbb = wa[starts[k]], wb[starts[k]]
                knots = np.concatenate((m, [bb]))
                dt = np.diff(np.concatenate(([aa], knots)))
                bm = np.cumsum(np.sqrt(dt) * self._rng.standard_normal(dt.size))
                # pin the free Brownian motion to the stored endpoints
                vals = waa + bm[:-1] - (m - aa) / (bb - aa) * (bm[-1] - (wbb - waa))
                add_t.append(m)
                add_v.append(vals)
        if tail.size:
            dt = np.diff(np.concatenate(([self._times[-1]], tail)))
            vals = self._values[-1] + np.cumsum(np.sqrt(dt) * self._rng.standard_normal(dt.size))
            add_t.append(tail)
            add_v.append(vals)

        t_all = np.concatenate([self._times] + add_t)
        v_all = np.concatenate([self._values] + add_v)
        order = np.argsort(t_all, kind="stable")
        self._times = t_all[order]
        self._values = v_all[order]
        return self

    def value_at(self, times):
        """Stored values at ``times``; raises if any time is missing."""
        scalar = np.ndim(times) == 0
        idx = self._locate(np.atleast_1d(times))
        if np.any(idx < 0):
            missing = np.atleast_1d(times)[idx < 0]
            raise GridNotRefined(f"no sample at times {missing[:5]}...")
        out = self._values[idx]
        return float(out[0]) if scalar else out

    def ensure(self, times):
        """Refine where needed, then return the values."""
        self.refine(times)
        return self.value_at(times)


# ----------------------------------------------------------------------
# time-changed Brownian motion
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class TimeChangedPath:
    """W read along the time-change, on a grid that contains every jump.

    Nodes duplicate each jump time: a left node carrying the pre-jump state
    and a right node carrying the post-jump state.  ``lam_w`` is the market
    time each node reads W at; ``lam_int``/``m_int`` are the left-limit
    state used when evaluating non-anticipative integrands at the node.
    """
    times: np.ndarray       # node times, jump times appear twice
    values: np.ndarray      # M at each node (left value at a jump-left node)
    lam_w: np.ndarray       # Lambda image each node reads W at
    lam_int: np.ndarray     # left limit of Lambda at the node time
    m_int: np.ndarray       # left limit of M at the node time
    is_jump_left: np.ndarray
    lam: TimeChangePath
    w: BrownianPath

    @property
    def grid_times(self):
        """Distinct grid times (jump duplicates collapsed)."""
        return np.unique(self.times)

    def jump_increments(self):
        """(tau, M left, M right) per jump on the grid."""
        out = []
        idx = np.flatnonzero(self.is_jump_left)
        for i in idx:
            out.append((float(self.times[i]), float(self.values[i]),
                        float(self.values[i + 1])))
        return out

    def to_csv_rows(self):
        return [(float(t), float(m), float(ml))
                for t, m, ml in zip(self.times, self.values, self.m_int)]


def sample_brownian(times, seed, horizon=None, path_index=0) -> BrownianPath:
    return BrownianPath.sample(times, horizon=horizon, seed=seed, path_index=path_index)


def lam_node_layout(lam: TimeChangePath, t_grid):
    """Node layout on the original clock: jump times appear as (left, right)
    pairs so pre-jump state stays exact.  Returns (times, lam_w, lam_int,
    is_jump_left) where lam_w is the market time each node maps to and
    lam_int the left limit used for integrand evaluation."""
    t_end = float(np.max(t_grid))
    grid = np.unique(np.concatenate((np.asarray(t_grid, dtype=float), [0.0],
                                     lam.jump_times[lam.jump_times <= t_end])))
    jump_set = set(float(x) for x in lam.jump_times)
    is_jump = np.array([float(t) in jump_set for t in grid])

    times = np.repeat(grid, np.where(is_jump, 2, 1))
    jl = np.zeros(times.size, dtype=bool)
    pos = np.cumsum(np.where(is_jump, 2, 1)) - np.where(is_jump, 2, 1)
    jl[pos[is_jump]] = True

    lam_right = lam.eval(grid)
    lam_left = lam.left_limit(grid)
    lam_w = np.repeat(lam_right, np.where(is_jump, 2, 1))
    lam_w[jl] = lam_left[is_jump]
    lam_int = np.repeat(lam_left, np.where(is_jump, 2, 1))
    return times, lam_w, lam_int, jl


def time_changed_bm(w: BrownianPath, lam: TimeChangePath, t_grid) -> TimeChangedPath:
    """Build M = W after the time-change on ``t_grid`` plus all jump times."""
    times, lam_w, lam_int, jl = lam_node_layout(lam, t_grid)
    w.refine(np.concatenate((lam_w, lam_int)))
    values = w.value_at(lam_w)
    m_int = w.value_at(lam_int)
    return TimeChangedPath(times=times, values=values, lam_w=lam_w,
                           lam_int=lam_int, m_int=m_int, is_jump_left=jl,
                           lam=lam, w=w)


def check_grid_has_jumps(lam: TimeChangePath, grid, t_end):
    """Raise GridMissingJump if a jump before ``t_end`` is absent from grid."""
    g = np.asarray(grid, dtype=float)
    for tau in lam.jump_times:
        if tau <= t_end and not np.any(np.abs(g - tau) <= TIME_ATOL):
            raise GridMissingJump(f"jump time {tau} missing from integration grid")
