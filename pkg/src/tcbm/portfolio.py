"""Semimartingale market on a strictly increasing time-change and the
closed-form optimal strategies for power and logarithmic utility.

The risky asset is S = S0 + M + A with M the time-changed Brownian motion
and A the finite-variation part, absolutely continuous on the market clock
with density theta.  The optimal position has stochastic-exponential form;
it is computed in log space (accumulate the drift-corrected integral,
exponentiate once), which keeps wealth positive by construction.

The market-clock strategy and its original-clock pullback are assembled
from independent formulas on corresponding grids, so their agreement is a
genuine check of the backward change-of-variable identity, not a tautology.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import rng as _rng
from .errors import (AxisMismatch, MomentGateFailed, NotH0Measurable,
                     NotLambdaAdapted, NotStrictlyIncreasing, PEqualsOne,
                     PNotOne, TooManyInadmissible)
from .noise import BrownianPath, time_changed_bm
from .stochint import uniform_grid
from .timechange import TimeChangeConfig, TimeChangePath, sample_timechange

LOG_UTILITY = 1.0  # risk aversion value selecting logarithmic utility


def utility(v, p):
    v = np.asarray(v, dtype=float)
    if p == LOG_UTILITY:
        return np.log(v)
    return v ** (1.0 - p) / (1.0 - p)


# ----------------------------------------------------------------------
# market drift density on the market clock
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ThetaFamily:
    """Drift density theta on the market clock.

    All three kinds are functions of market time and the time-change path
    only, hence measurable at market time zero under the enlarged
    filtration.  ``of_time`` cannot be adapted to a jumping time-change and
    is rejected for one at market construction.
    """
    kind: str                      # constant | of_time | of_gamma
    const: float = 0.0
    fn: Optional[Callable] = None
    sup_abs: Optional[float] = None  # analytic bound; None means unbounded

    @classmethod
    def constant(cls, c):
        return cls(kind="constant", const=float(c), sup_abs=abs(float(c)))

    @classmethod
    def of_time(cls, fn, sup_abs=None):
        return cls(kind="of_time", fn=fn, sup_abs=sup_abs)

    @classmethod
    def of_gamma(cls, fn, sup_abs=None):
        return cls(kind="of_gamma", fn=fn, sup_abs=sup_abs)

    @property
    def h0_measurable(self) -> bool:
        return True

    def values(self, r, gam: TimeChangePath):
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            return np.full(r.shape, self.const)
        if self.kind == "of_time":
            return np.asarray(self.fn(r), dtype=float)
        if self.kind == "of_gamma":
            return np.asarray(self.fn(gam.eval(r)), dtype=float)
        raise ValueError(f"unknown theta kind {self.kind!r}")


@dataclass(frozen=True)
class GateResult:
    passed: bool
    bound: Optional[float]
    reason: str = ""


def exp_moment_gate(theta: ThetaFamily, r_end: float) -> GateResult:
    """Analytic exponential-moment bound exp(r_end * sup theta^2)."""
    if theta.sup_abs is None:
        return GateResult(False, None, "Unbounded")
    return GateResult(True, float(np.exp(r_end * theta.sup_abs ** 2)))


# ----------------------------------------------------------------------
# market specification and per-path construction
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class MarketSpec:
    x: float                 # initial wealth
    p: float                 # risk aversion; 1.0 selects log utility
    s0: float
    horizon: float           # original-clock horizon
    theta: ThetaFamily
    tc_config: TimeChangeConfig
    dt: float = 1.0 / 256

    def validate(self):
        if self.x <= 0:
            raise ValueError(f"initial wealth must be positive, got {self.x}")
        if self.p <= 0:
            raise ValueError(f"risk aversion must be positive, got {self.p}")
        self.tc_config.validate()
        if self.tc_config.drift_slope <= 0:
            raise NotStrictlyIncreasing(
                "market construction needs a strictly increasing time-change")
        gate = exp_moment_gate(self.theta, self.tc_config.range_end)
        if not gate.passed:
            raise MomentGateFailed(f"exponential moment gate: {gate.reason}")
        if not self.theta.h0_measurable:
            raise NotH0Measurable("theta must be measurable at market time zero")


@dataclass(frozen=True)
class MarketPaths:
    """One market realization on matched grids.

    ``r_nodes`` are exactly the time-change images of the original-clock
    nodes (jump images contribute both endpoints), so the two clocks are in
    bijection and pullback identities can be checked termwise.
    """
    spec: MarketSpec
    lam: TimeChangePath
    gam: TimeChangePath
    w: BrownianPath
    times: np.ndarray        # original-clock node times
    r_nodes: np.ndarray      # market-clock node times (= lam images)
    m: np.ndarray            # time-changed driver at nodes
    theta_r: np.ndarray      # theta at each market node
    da: np.ndarray           # finite-variation increments per interval
    a: np.ndarray            # A at nodes (left-point antiderivative of theta)
    s: np.ndarray            # asset price at nodes
    is_jump_left: np.ndarray


def build_market_paths(spec: MarketSpec, seed: int, path_index: int = 0,
                       lam: Optional[TimeChangePath] = None) -> MarketPaths:
    spec.validate()
    if lam is None:
        lam = sample_timechange(spec.tc_config, seed, path_index)
    if not lam.strictly_increasing:
        raise NotStrictlyIncreasing("sampled time-change is not strictly increasing")
    if spec.theta.kind == "of_time" and len(lam.jumps) > 0:
        raise NotLambdaAdapted(
            "a pure function of market time cannot be adapted to a jumping clock")
    gam = lam.inverse()
    w = BrownianPath(spec.tc_config.range_end,
                     rng=_rng.stream(seed, path_index, _rng.STREAM_W))
    tcp = time_changed_bm(w, lam, uniform_grid(spec.horizon, spec.dt))

    r_nodes = tcp.lam_w  # strictly increasing: bijection with the t-nodes
    theta_r = spec.theta.values(r_nodes, gam)
    da = theta_r[:-1] * np.diff(r_nodes)
    a = np.concatenate(([0.0], np.cumsum(da)))
    s = spec.s0 + tcp.values + a
    return MarketPaths(spec=spec, lam=lam, gam=gam, w=w, times=tcp.times,
                       r_nodes=r_nodes, m=tcp.values, theta_r=theta_r,
                       da=da, a=a, s=s, is_jump_left=tcp.is_jump_left)


# ----------------------------------------------------------------------
# strategies
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class StrategyPath:
    axis: str                # "t" (original clock) or "r" (market clock)
    times: np.ndarray
    values: np.ndarray
    tag: str
    wealth: Optional[np.ndarray] = None  # exact exponential wealth when known


def optimal_strategy_tilde(spec: MarketSpec, paths: MarketPaths) -> StrategyPath:
    """Market-clock optimizer: position = x * (theta/p) * exp(log-wealth)."""
    pi = paths.theta_r / spec.p
    w_r = paths.w.value_at(paths.r_nodes)
    dr = np.diff(paths.r_nodes)
    incr = pi[:-1] * np.diff(w_r) + (pi[:-1] * paths.theta_r[:-1]
                                     - 0.5 * pi[:-1] ** 2) * dr
    log_e = np.concatenate(([0.0], np.cumsum(incr)))
    wealth = spec.x * np.exp(log_e)
    return StrategyPath(axis="r", times=paths.r_nodes, values=pi * wealth,
                        tag="optimal_tilde", wealth=wealth)


def optimal_strategy_hat(spec: MarketSpec, paths: MarketPaths) -> StrategyPath:
    """Original-clock optimizer via the pullback formula: the exponent
    accumulates (theta o Lambda)/p against M plus
    (2p-1)/(2p^2) (theta o Lambda) against A."""
    theta_l = paths.theta_r  # theta o Lambda at each node (grids correspond)
    cp = (2.0 * spec.p - 1.0) / (2.0 * spec.p ** 2)
    incr = (theta_l[:-1] / spec.p) * np.diff(paths.m) + cp * theta_l[:-1] * paths.da
    expo = np.concatenate(([0.0], np.cumsum(incr)))
    wealth = spec.x * np.exp(expo)
    values = theta_l * spec.x / spec.p * np.exp(expo)
    return StrategyPath(axis="t", times=paths.times, values=values,
                        tag="optimal_hat", wealth=wealth)


def wealth_process(x: float, strategy: StrategyPath, paths: MarketPaths,
                   euler: bool = None):
    """Wealth along a strategy; left-point sums against the matching driver.

    Returns (values, admissible).  Strategies carrying an exact exponential
    wealth use it unless ``euler=True`` forces the generic accumulation.
    """
    if strategy.axis == "t":
        driver = paths.s
    elif strategy.axis == "r":
        w_r = paths.w.value_at(paths.r_nodes)
        driver = w_r + paths.a  # X = W + int theta du on the market clock
    else:
        raise AxisMismatch(f"unknown strategy axis {strategy.axis!r}")
    if strategy.wealth is not None and not euler:
        return strategy.wealth, bool(np.all(strategy.wealth >= 0))
    v = x + np.concatenate(([0.0], np.cumsum(strategy.values[:-1] * np.diff(driver))))
    return v, bool(np.all(v >= -1e-12))


def make_strategy(tag: str, spec: MarketSpec, paths: MarketPaths) -> StrategyPath:
    """Build a named strategy.  Tags:

    optimal            exact optimizer on the original clock
    scaled:<c>         proportional strategy with fraction c * theta/p
    constant_amount:<c>  fixed position of c units
    buy_hold:<f>       hold f*x/S0 units throughout
    zero               no position
    """
    if tag == "optimal":
        return optimal_strategy_hat(spec, paths)
    if tag == "zero":
        return StrategyPath(axis="t", times=paths.times,
                            values=np.zeros(paths.times.shape), tag=tag,
                            wealth=np.full(paths.times.shape, spec.x))
    if tag.startswith("scaled:"):
        c = float(tag.split(":", 1)[1])
        eta = c * paths.theta_r / spec.p
        w_r = paths.w.value_at(paths.r_nodes)
        dr = np.diff(paths.r_nodes)
        incr = eta[:-1] * np.diff(w_r) + (eta[:-1] * paths.theta_r[:-1]
                                          - 0.5 * eta[:-1] ** 2) * dr
        wealth = spec.x * np.exp(np.concatenate(([0.0], np.cumsum(incr))))
        return StrategyPath(axis="r", times=paths.r_nodes,
                            values=eta * wealth, tag=tag, wealth=wealth)
    if tag.startswith("constant_amount:"):
        c = float(tag.split(":", 1)[1])
        return StrategyPath(axis="t", times=paths.times,
                            values=np.full(paths.times.shape, c), tag=tag)
    if tag.startswith("buy_hold:"):
        f = float(tag.split(":", 1)[1])
        units = f * spec.x / spec.s0
        return StrategyPath(axis="t", times=paths.times,
                            values=np.full(paths.times.shape, units), tag=tag)
    raise ValueError(f"unknown strategy tag {tag!r}")


# ----------------------------------------------------------------------
# closed-form values
# ----------------------------------------------------------------------

def value_closed_form_power(spec: MarketSpec, paths: MarketPaths,
                            t: float = 0.0) -> float:
    """Per-path conditional value for power utility; the scalar objective
    at t=0 is the Monte Carlo average of this over time-change draws."""
    if spec.p == LOG_UTILITY:
        raise PEqualsOne("power value undefined at p=1; use the log form")
    lam_t = paths.lam.eval(t)
    mask = paths.r_nodes[:-1] >= lam_t - 1e-12
    integral = float(np.sum((paths.theta_r[:-1] ** 2 * np.diff(paths.r_nodes))[mask]))
    factor = (1.0 - spec.p) / (2.0 * spec.p)
    return spec.x ** (1.0 - spec.p) / (1.0 - spec.p) * float(np.exp(factor * integral))


def value_closed_form_log(spec: MarketSpec, paths: MarketPaths,
                          t: float = 0.0) -> float:
    """Per-path conditional value for logarithmic utility."""
    if spec.p != LOG_UTILITY:
        raise PNotOne(f"log value needs p=1, got p={spec.p}")
    lam_t = paths.lam.eval(t)
    theta_sq = 0.5 * float(np.sum(paths.theta_r[:-1] ** 2 * np.diff(paths.r_nodes)))
    stoch = 0.0
    if lam_t > 0:
        w_r = paths.w.value_at(paths.r_nodes)
        mask = paths.r_nodes[1:] <= lam_t + 1e-12
        stoch = float(np.sum((paths.theta_r[:-1] * np.diff(w_r))[mask]))
    return float(np.log(spec.x)) + stoch + theta_sq


# ----------------------------------------------------------------------
# Monte Carlo evaluation
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class StrategyEstimate:
    mean: float
    stderr: float
    n: int
    n_inadmissible: int
    seed: int
    dt: float
    tag: str


def evaluate_strategy_mc(spec: MarketSpec, tag: str, n_paths: int, seed: int,
                         max_inadmissible_frac: float = 1e-3) -> StrategyEstimate:
    """Mean and standard error of terminal utility for one named strategy."""
    total = 0.0
    total_sq = 0.0
    bad = 0
    n_ok = 0
    for i in range(n_paths):
        paths = build_market_paths(spec, seed, i)
        strat = make_strategy(tag, spec, paths)
        v, admissible = wealth_process(spec.x, strat, paths)
        if not admissible or v[-1] <= 0:
            bad += 1
            continue
        u = float(utility(v[-1], spec.p))
        total += u
        total_sq += u * u
        n_ok += 1
    if bad > max_inadmissible_frac * n_paths:
        raise TooManyInadmissible(f"{bad}/{n_paths} paths went inadmissible")
    mean = total / n_ok
    var = max(total_sq / n_ok - mean * mean, 0.0)
    stderr = float(np.sqrt(var / n_ok)) if n_ok > 1 else 0.0
    return StrategyEstimate(mean=mean, stderr=stderr, n=n_ok,
                            n_inadmissible=bad, seed=seed, dt=spec.dt, tag=tag)


PERTURBATION_BATTERY = ("scaled:0.5", "scaled:1.5", "constant_amount:0.25",
                        "buy_hold:0.5")


@dataclass(frozen=True)
class DominanceRow:
    tag: str
    mean: float
    stderr: float
    diff_vs_optimal: float     # perturbed minus optimal (negative = dominated)
    stderr_diff: float
    dominated: bool            # diff <= 3 * stderr_diff


def dominance_battery(spec: MarketSpec, n_paths: int, seed: int,
                      battery=PERTURBATION_BATTERY):
    """Evaluate the optimizer and the perturbation battery on common paths."""
    tags = ("optimal",) + tuple(battery)
    sums = {tag: [0.0, 0.0, 0] for tag in tags}      # sum, sumsq, n
    dsums = {tag: [0.0, 0.0] for tag in battery}     # paired differences
    for i in range(n_paths):
        paths = build_market_paths(spec, seed, i)
        u = {}
        for tag in tags:
            strat = make_strategy(tag, spec, paths)
            v, admissible = wealth_process(spec.x, strat, paths)
            u[tag] = float(utility(v[-1], spec.p)) if admissible and v[-1] > 0 else None
        for tag in tags:
            if u[tag] is not None:
                sums[tag][0] += u[tag]
                sums[tag][1] += u[tag] ** 2
                sums[tag][2] += 1
        for tag in battery:
            if u[tag] is not None and u["optimal"] is not None:
                d = u[tag] - u["optimal"]
                dsums[tag][0] += d
                dsums[tag][1] += d * d

    def _stats(s, ss, n):
        mean = s / n
        var = max(ss / n - mean * mean, 0.0)
        return mean, float(np.sqrt(var / n))

    opt_mean, opt_se = _stats(*sums["optimal"])
    rows = [DominanceRow("optimal", opt_mean, opt_se, 0.0, 0.0, True)]
    for tag in battery:
        mean, se = _stats(*sums[tag])
        n = sums[tag][2]
        dmean, dse = _stats(dsums[tag][0], dsums[tag][1], n)
        rows.append(DominanceRow(tag, mean, se, dmean, dse,
                                 dominated=dmean <= 3.0 * dse))
    return rows
