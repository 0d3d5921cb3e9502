"""Estimator plumbing, convergence studies and statistical tests.

Path i always draws from stream (master seed, i), so results do not depend
on how paths are batched across workers; serial runs are bit-reproducible.
Acceptance bands are 3 standard errors throughout.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng as _rng
from .errors import NumericalFailure
from .noise import BrownianPath, time_changed_bm
from .stochint import (IntegrandSpec, LambdaAdaptedProcess, RAxisProcess,
                       integrand_by_name, r_process_by_name, uniform_grid,
                       verify_backward, verify_forward, verify_jacod)
from .timechange import TimeChangeConfig, sample_timechange

EXACT_RMS = 1e-12  # below this a level is treated as exact, not fitted


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n: int
    seed: int
    dt: Optional[float] = None


def from_moments(total, total_sq, n, seed, dt=None) -> Estimate:
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    stderr = float(np.sqrt(var / n)) if n > 1 else 0.0
    return Estimate(mean=float(mean), stderr=stderr, n=n, seed=seed, dt=dt)


def run_estimate(path_functional, n_paths: int, seed: int, dt=None) -> Estimate:
    """Mean/stderr of a pure per-path functional over i.i.d. path seeds.

    ``path_functional(path_index)`` must derive all randomness from streams
    keyed by (seed, path_index); same inputs give the identical Estimate.
    """
    total = 0.0
    total_sq = 0.0
    for i in range(n_paths):
        x = float(path_functional(i))
        total += x
        total_sq += x * x
    return from_moments(total, total_sq, n_paths, seed, dt)


# ----------------------------------------------------------------------
# convergence studies
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceTable:
    formula: str
    case: str
    deltas: np.ndarray       # strictly decreasing
    rms: np.ndarray
    max_abs: np.ndarray
    n_paths: int
    seed: int
    slope: Optional[float]   # fitted log-log slope; None when flagged exact
    intercept: Optional[float]
    exact: bool

    def rows(self, experiment_id=""):
        return [(experiment_id, self.formula, float(d), self.n_paths,
                 float(r), float(m), self.seed)
                for d, r, m in zip(self.deltas, self.rms, self.max_abs)]


def fit_loglog_slope(deltas, rms):
    """Least-squares slope of log rms against log delta over all levels."""
    d = np.asarray(deltas, dtype=float)
    r = np.asarray(rms, dtype=float)
    keep = r > 1e-13
    if keep.sum() < 2:
        return None, None
    coeffs = np.polyfit(np.log(d[keep]), np.log(r[keep]), 1)
    return float(coeffs[0]), float(coeffs[1])


FORMULAS = ("forward", "backward", "jacod_i", "jacod_ii")


def _one_pair(formula, case, lam, gam, w, w2, t, dt, enforce_adapted):
    if formula == "forward":
        nu = integrand_by_name(case)
        return verify_forward(nu, lam, w, t, dt)
    if formula == "backward":
        nut = r_process_by_name(case, gam=gam, w=w)
        return verify_backward(nut, lam, w, t, dt,
                               enforce_adapted=enforce_adapted)
    s_proc = LambdaAdaptedProcess.flattened_brownian(w2, lam)
    if formula == "jacod_i":
        nu = integrand_by_name(case)
        return verify_jacod("i", lam, s_proc, t, dt, nu=nu)
    if formula == "jacod_ii":
        nut = r_process_by_name(case, gam=gam, w=w)
        return verify_jacod("ii", lam, s_proc, t, dt, nut=nut)
    raise ValueError(f"unknown formula {formula!r}")


def convergence_study(formula: str, case: str, config: TimeChangeConfig,
                      t: float, deltas, n_paths: int, seed: int,
                      enforce_adapted: bool = True) -> ConvergenceTable:
    """RMS and max of |lhs - rhs| per grid level, sharing one Brownian
    realization across levels (coarse grids refine into fine ones)."""
    deltas = sorted(set(float(d) for d in deltas), reverse=True)
    if len(deltas) < 1:
        raise NumericalFailure("need at least one grid level")
    sq = np.zeros(len(deltas))
    mx = np.zeros(len(deltas))
    for i in range(n_paths):
        lam = sample_timechange(config, seed, i)
        gam = lam.inverse()
        w = BrownianPath(config.range_end, rng=_rng.stream(seed, i, _rng.STREAM_W))
        w2 = BrownianPath(config.range_end, rng=_rng.stream(seed, i, _rng.STREAM_AUX))
        for k, dt in enumerate(deltas):
            pair = _one_pair(formula, case, lam, gam, w, w2, t, dt,
                             enforce_adapted)
            sq[k] += pair.abs_diff ** 2
            mx[k] = max(mx[k], pair.abs_diff)
    rms = np.sqrt(sq / n_paths)
    exact = bool(np.all(rms <= EXACT_RMS))
    slope, intercept = (None, None) if exact else fit_loglog_slope(deltas, rms)
    return ConvergenceTable(formula=formula, case=case,
                            deltas=np.asarray(deltas), rms=rms, max_abs=mx,
                            n_paths=n_paths, seed=seed, slope=slope,
                            intercept=intercept, exact=exact)


# ----------------------------------------------------------------------
# martingale tests
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class MartingaleRow:
    label: str
    s: float
    t: float
    mean: float
    stderr: float
    passed: bool  # |mean| <= 3 stderr


@dataclass(frozen=True)
class MartingaleReport:
    rows: list
    n_paths: int
    seed: int

    @property
    def all_passed(self):
        return all(r.passed for r in self.rows)


PAST_FUNCTIONALS = {
    "one": lambda m, lam: np.ones_like(m),
    "sign": lambda m, lam: np.sign(m),
    "clip": lambda m, lam: np.clip(m, -1.0, 1.0),
}


def sample_driver_at(config: TimeChangeConfig, grid, seed: int, path_index: int,
                     drift: float = 0.0):
    """One path of (M, Lambda) observed at the given original-clock times.

    ``drift`` adds a deterministic trend to M, used to confirm test power."""
    grid = np.asarray(grid, dtype=float)
    lam = sample_timechange(config, seed, path_index)
    w = BrownianPath(config.range_end, rng=_rng.stream(seed, path_index, _rng.STREAM_W))
    images = lam.eval(grid)
    w.refine(images)
    return w.value_at(images) + drift * grid, images


def martingale_rows(grid, m_all, lam_all):
    """Per-(s,t,g) orthogonality statistics from sampled driver arrays."""
    grid = np.asarray(grid, dtype=float)
    m_all = np.asarray(m_all, dtype=float)
    lam_all = np.asarray(lam_all, dtype=float)
    n_paths = m_all.shape[0]
    rows = []
    for j, t in enumerate(grid):
        col = m_all[:, j]
        mean = float(col.mean())
        se = float(col.std(ddof=1) / np.sqrt(n_paths))
        rows.append(MartingaleRow("mean", 0.0, float(t), mean, se,
                                  abs(mean) <= 3.0 * se))
    for a in range(grid.size):
        for b in range(a + 1, grid.size):
            incr = m_all[:, b] - m_all[:, a]
            for label, g in PAST_FUNCTIONALS.items():
                stat = incr * g(m_all[:, a], lam_all[:, a])
                mean = float(stat.mean())
                se = float(stat.std(ddof=1) / np.sqrt(n_paths))
                rows.append(MartingaleRow(label, float(grid[a]), float(grid[b]),
                                          mean, se, abs(mean) <= 3.0 * se))
    return rows


def martingale_test(config: TimeChangeConfig, grid, n_paths: int, seed: int,
                    drift: float = 0.0) -> MartingaleReport:
    """Increment-orthogonality tests for the time-changed driver.

    For each grid pair s < t and past-functional g, the statistic
    (M_t - M_s) * g(M_s, Lambda_s) must average to zero within 3 stderr.
    """
    grid = np.asarray(sorted(set(float(g) for g in grid)))
    if grid[0] <= 0:
        raise NumericalFailure("grid times must be positive")
    m_all = np.empty((n_paths, grid.size))
    lam_all = np.empty((n_paths, grid.size))
    for i in range(n_paths):
        m_all[i], lam_all[i] = sample_driver_at(config, grid, seed, i, drift)
    rows = martingale_rows(grid, m_all, lam_all)
    return MartingaleReport(rows=rows, n_paths=n_paths, seed=seed)


def terminal_variance_check(config: TimeChangeConfig, t: float, n_paths: int,
                            seed: int):
    """Sample Var(M_t) against E[Lambda_t] from the sampler parameters.

    Returns (sample variance, expected, stderr of the variance estimate,
    passed)."""
    m = np.empty(n_paths)
    for i in range(n_paths):
        lam = sample_timechange(config, seed, i)
        w = BrownianPath(config.range_end, rng=_rng.stream(seed, i, _rng.STREAM_W))
        m[i] = w.ensure(np.array([lam.eval(t)]))[0]
    centered = (m - m.mean()) ** 2
    var = float(centered.mean())
    se = float(centered.std(ddof=1) / np.sqrt(n_paths))
    expected = config.mean_final_value * (t / config.horizon) \
        if t != config.horizon else config.mean_final_value
    passed = abs(var - expected) <= 3.0 * se
    return var, float(expected), se, passed


def independence_check(config: TimeChangeConfig, r_probe: float, n_paths: int,
                       seed: int):
    """Empirical correlation between the terminal clock value and W at a
    fixed market time; must vanish within 3 stderr."""
    lam_t = np.empty(n_paths)
    w_r = np.empty(n_paths)
    for i in range(n_paths):
        lam = sample_timechange(config, seed, i)
        w = BrownianPath(config.range_end, rng=_rng.stream(seed, i, _rng.STREAM_W))
        lam_t[i] = lam.final_value
        w_r[i] = w.ensure(np.array([r_probe]))[0]
    prod = (lam_t - lam_t.mean()) * (w_r - w_r.mean())
    mean = float(prod.mean())
    se = float(prod.std(ddof=1) / np.sqrt(n_paths))
    return mean, se, abs(mean) <= 3.0 * se
