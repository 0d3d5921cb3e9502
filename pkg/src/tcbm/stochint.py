"""Pathwise stochastic integration and the two change-of-variable checks.

All integrals are left-point sums.  At a jump of the time-change the
integrand multiplying the jump increment is evaluated from strictly-prior
path data, matching the jump terms of the identities being verified.
Both sides of every identity are computed from the *same* realization of
the driver and the time-change.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (GridMissingJump, InverseMismatch, NotLambdaAdapted,
                     NumericalFailure)
from .noise import (BrownianPath, TimeChangedPath, lam_node_layout,
                    time_changed_bm)
from .timechange import TimeChangeConfig, TimeChangePath, sample_timechange
from . import rng as _rng

ADAPTED_TOL = 1e-9
ADAPTED_PROBES = 8


# ----------------------------------------------------------------------
# integrands on the original clock (non-anticipative functionals)
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class IntegrandSpec:
    """A non-anticipative integrand from a closed set of families.

    The general callback receives ``(times, lam_hist, m_hist, s)`` — node
    samples of the time-change and the time-changed driver strictly before
    ``s``.  Continuity of the callback in its path arguments is a caller
    obligation (documented contract, not checked).
    """
    kind: str
    fn: Optional[Callable] = None
    const: float = 0.0
    square_integrability_bound: Optional[float] = None

    @classmethod
    def constant(cls, c):
        return cls(kind="constant", const=float(c),
                   square_integrability_bound=float(c) ** 2)

    @classmethod
    def of_time(cls, fn, bound=None):
        return cls(kind="of_time", fn=fn, square_integrability_bound=bound)

    @classmethod
    def of_lambda_left(cls, fn, bound=None):
        return cls(kind="of_lambda_left", fn=fn, square_integrability_bound=bound)

    @classmethod
    def of_m_left(cls, fn, bound=None):
        return cls(kind="of_m_left", fn=fn, square_integrability_bound=bound)

    @classmethod
    def callback(cls, fn, bound=None):
        return cls(kind="callback", fn=fn, square_integrability_bound=bound)

    def values(self, times, lam_int, m_int):
        """Evaluate at each node from its left-limit state."""
        times = np.asarray(times, dtype=float)
        if self.kind == "constant":
            return np.full(times.shape, self.const)
        if self.kind == "of_time":
            return np.asarray(self.fn(times), dtype=float)
        if self.kind == "of_lambda_left":
            return np.asarray(self.fn(np.asarray(lam_int, dtype=float)), dtype=float)
        if self.kind == "of_m_left":
            return np.asarray(self.fn(np.asarray(m_int, dtype=float)), dtype=float)
        if self.kind == "callback":
            out = np.empty(times.shape)
            for k, s in enumerate(times):
                hist = times < s
                out[k] = self.fn(times[hist], np.asarray(lam_int)[hist],
                                 np.asarray(m_int)[hist], float(s))
            return out
        raise ValueError(f"unknown integrand kind {self.kind!r}")


def integrand_by_name(name: str, c: float = 1.0) -> IntegrandSpec:
    """Named integrands used by experiments and acceptance runs."""
    if name == "constant":
        return IntegrandSpec.constant(c)
    if name == "time":
        return IntegrandSpec.of_time(lambda s: s)
    if name == "lambda_left":
        return IntegrandSpec.of_lambda_left(lambda x: x)
    if name == "m_left":
        return IntegrandSpec.of_m_left(lambda m: m)
    raise ValueError(f"unknown integrand name {name!r}")


# ----------------------------------------------------------------------
# processes on the market clock
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class RAxisProcess:
    """A process indexed by market time, evaluable on any r-grid."""
    kind: str
    fn: Optional[Callable] = None
    const: float = 0.0
    gam: Optional[TimeChangePath] = None
    w: Optional[BrownianPath] = None

    @classmethod
    def constant(cls, c):
        return cls(kind="constant", const=float(c))

    @classmethod
    def of_gamma(cls, gam, fn=None):
        """fn applied to the generalized inverse; identity when fn is None.
        Flat exactly on jump images, hence time-change adapted."""
        return cls(kind="of_gamma", gam=gam, fn=fn)

    @classmethod
    def of_r(cls):
        """The raw market clock r -> r; NOT adapted across jumps."""
        return cls(kind="of_r")

    @classmethod
    def of_w(cls, w):
        """The Brownian driver itself; NOT adapted across jumps."""
        return cls(kind="of_w", w=w)

    @classmethod
    def from_callable(cls, fn):
        return cls(kind="callable", fn=fn)

    def values(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            return np.full(r.shape, self.const)
        if self.kind == "of_gamma":
            g = self.gam.eval(r)
            return np.asarray(g if self.fn is None else self.fn(g), dtype=float)
        if self.kind == "of_r":
            return r.copy()
        if self.kind == "of_w":
            return np.asarray(self.w.ensure(r), dtype=float)
        if self.kind == "callable":
            return np.asarray(self.fn(r), dtype=float)
        raise ValueError(f"unknown process kind {self.kind!r}")


def r_process_by_name(name: str, gam=None, w=None, c: float = 1.0) -> RAxisProcess:
    if name == "constant":
        return RAxisProcess.constant(c)
    if name == "gamma":
        return RAxisProcess.of_gamma(gam)
    if name == "gamma_sq":
        return RAxisProcess.of_gamma(gam, fn=lambda g: g * g)
    if name == "r":
        return RAxisProcess.of_r()
    if name == "w":
        return RAxisProcess.of_w(w)
    raise ValueError(f"unknown r-axis process {name!r}")


@dataclass(frozen=True)
class AdaptednessReport:
    passed: bool
    tol: float
    violations: list = field(default_factory=list)  # (jump time, max deviation)

    def first_violation(self):
        return self.violations[0] if self.violations else None


def check_lambda_adapted(proc: RAxisProcess, lam: TimeChangePath,
                         tol: float = ADAPTED_TOL, probes: int = ADAPTED_PROBES,
                         t_end: Optional[float] = None) -> AdaptednessReport:
    """Probe constancy of ``proc`` on every jump image [Lambda_-, Lambda]."""
    t_end = lam.domain_end if t_end is None else t_end
    violations = []
    for tau, a, b in lam.jumps:
        if tau > t_end:
            continue
        r = np.linspace(a, b, probes)
        vals = proc.values(r)
        dev = float(np.max(np.abs(vals - vals[0])))
        if dev > tol:
            violations.append((float(tau), dev))
    return AdaptednessReport(passed=not violations, tol=tol, violations=violations)


# ----------------------------------------------------------------------
# elementary sums
# ----------------------------------------------------------------------

def ito_sum(values, driver):
    """Left-point sum  sum_k values[k] * (driver[k+1] - driver[k])."""
    values = np.asarray(values, dtype=float)
    driver = np.asarray(driver, dtype=float)
    return float(np.dot(values[:-1], np.diff(driver)))


def ito_integral_dw(proc, w: BrownianPath, grid):
    """Ito integral of an r-axis process against W over ``grid``."""
    grid = np.asarray(grid, dtype=float)
    vals = proc.values(grid) if hasattr(proc, "values") else np.asarray(proc, float)
    return ito_sum(vals, w.value_at(grid))


def stieltjes_integral(nu_values, a_values):
    """Left-point Riemann–Stieltjes sum against a finite-variation path."""
    return ito_sum(nu_values, a_values)


def ito_integral_dm(nu: IntegrandSpec, tcp: TimeChangedPath, t: float):
    """Ito integral of a non-anticipative integrand against M up to ``t``."""
    for tau in tcp.lam.jump_times:
        if tau <= t and not np.any(np.isclose(tcp.times, tau, atol=1e-12)):
            raise GridMissingJump(f"jump at {tau} missing from the M grid")
    mask = tcp.times <= t + 1e-12
    vals = nu.values(tcp.times[mask], tcp.lam_int[mask], tcp.m_int[mask])
    return ito_sum(vals, tcp.values[mask])


# ----------------------------------------------------------------------
# composition with the generalized inverse
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ComposedIntegrand:
    """nu read through the inverse clock: r -> nu evaluated at Gamma_r
    from path data strictly before Gamma_r."""
    nu: IntegrandSpec
    lam: TimeChangePath
    gam: TimeChangePath
    w: BrownianPath
    tcp: Optional[TimeChangedPath] = None  # node history for callbacks

    def values(self, r):
        r = np.asarray(r, dtype=float)
        tt = self.gam.eval(r)
        if self.nu.kind == "constant":
            return np.full(r.shape, self.nu.const)
        if self.nu.kind == "of_time":
            return np.asarray(self.nu.fn(tt), dtype=float)
        lam_l = self.lam.left_limit(tt)
        if self.nu.kind == "of_lambda_left":
            return np.asarray(self.nu.fn(lam_l), dtype=float)
        if self.nu.kind == "of_m_left":
            m_l = self.w.ensure(lam_l)
            return np.asarray(self.nu.fn(m_l), dtype=float)
        if self.nu.kind == "callback":
            if self.tcp is None:
                raise NumericalFailure("callback composition needs the node history")
            out = np.empty(r.shape)
            nt, nl, nm = self.tcp.times, self.tcp.lam_int, self.tcp.m_int
            for k, s in enumerate(tt):
                hist = nt < s
                out[k] = self.nu.fn(nt[hist], nl[hist], nm[hist], float(s))
            return out
        raise ValueError(f"unknown integrand kind {self.nu.kind!r}")


def compose_with_inverse(nu: IntegrandSpec, lam: TimeChangePath,
                         gam: TimeChangePath, w: BrownianPath,
                         tcp: Optional[TimeChangedPath] = None) -> ComposedIntegrand:
    ref = lam.inverse()
    same = (ref.times.shape == gam.times.shape
            and np.allclose(ref.times, gam.times, atol=1e-12)
            and np.allclose(ref.left_values, gam.left_values, atol=1e-12)
            and np.allclose(ref.right_values, gam.right_values, atol=1e-12))
    if not same:
        raise InverseMismatch("gamma is not the generalized inverse of lambda")
    return ComposedIntegrand(nu=nu, lam=lam, gam=gam, w=w, tcp=tcp)


# ----------------------------------------------------------------------
# grids
# ----------------------------------------------------------------------

def uniform_grid(end: float, step: float) -> np.ndarray:
    n = int(np.ceil(end / step - 1e-9))
    g = step * np.arange(n)
    return np.concatenate((g[g < end - 1e-12], [end]))


def market_grid(lam: TimeChangePath, t_end: float, dr: float) -> np.ndarray:
    """Uniform r-grid up to Lambda_{t_end}, plus every jump image endpoint."""
    r_end = lam.eval(t_end)
    pieces = [uniform_grid(r_end, dr)]
    for tau, a, b in lam.jumps:
        if tau <= t_end:
            pieces.append(np.array([a, b]))
    r = np.unique(np.concatenate(pieces))
    return r[r <= r_end + 1e-12]


# ----------------------------------------------------------------------
# identity verification
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class IntegralPair:
    lhs: float
    rhs: float
    abs_diff: float
    dt: float
    seed: Optional[int] = None

    @classmethod
    def of(cls, lhs, rhs, dt, seed=None):
        return cls(float(lhs), float(rhs), abs(float(lhs) - float(rhs)),
                   float(dt), seed)


def verify_forward(nu: IntegrandSpec, lam: TimeChangePath, w: BrownianPath,
                   t: float, dt: float, dr: Optional[float] = None,
                   shared_grid: bool = False, seed: Optional[int] = None) -> IntegralPair:
    """Compare  int_0^t nu dM  against  int_0^{Lambda_t} (nu o Gamma) dW.

    ``shared_grid=True`` makes the r-grid exactly the image of the t-grid,
    under which integrands depending only on deterministic path data
    telescope identically on both sides.
    """
    gam = lam.inverse()
    tcp = time_changed_bm(w, lam, uniform_grid(t, dt))
    lhs = ito_integral_dm(nu, tcp, t)

    if shared_grid:
        r = np.unique(tcp.lam_w)
    else:
        r = market_grid(lam, t, dt if dr is None else dr)
    w.refine(r)
    comp = compose_with_inverse(nu, lam, gam, w, tcp=tcp)
    rhs = ito_sum(comp.values(r), w.value_at(r))
    return IntegralPair.of(lhs, rhs, dt, seed)


def verify_backward(nut: RAxisProcess, lam: TimeChangePath, w: BrownianPath,
                    t: float, dt: float, dr: Optional[float] = None,
                    enforce_adapted: bool = True,
                    seed: Optional[int] = None) -> IntegralPair:
    """Compare  int_0^{Lambda_t} nut dW  against  int_0^t (nut o Lambda) dM.

    The time-change-adaptedness hypothesis is checked first;
    ``enforce_adapted=False`` bypasses the gate so the harness can measure
    how badly the identity fails for a non-adapted integrand.
    """
    if enforce_adapted:
        report = check_lambda_adapted(nut, lam, t_end=t)
        if not report.passed:
            tau, dev = report.first_violation()
            raise NotLambdaAdapted(
                f"integrand varies by {dev:.3g} on the jump image at t={tau}",
                report=report)

    r = market_grid(lam, t, dt if dr is None else dr)
    w.refine(r)
    lhs = ito_sum(nut.values(r), w.value_at(r))

    tcp = time_changed_bm(w, lam, uniform_grid(t, dt))
    mask = tcp.times <= t + 1e-12
    rhs = ito_sum(nut.values(tcp.lam_int[mask]), tcp.values[mask])
    return IntegralPair.of(lhs, rhs, dt, seed)


# ----------------------------------------------------------------------
# time-change-adapted semimartingales for the classical lemma
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class LambdaAdaptedProcess:
    """An r-axis semimartingale constant on every jump image of the clock."""
    kind: str
    fn: Optional[Callable] = None
    gam: Optional[TimeChangePath] = None
    w2: Optional[BrownianPath] = None
    starts: Optional[np.ndarray] = None   # jump image left endpoints
    ends: Optional[np.ndarray] = None     # jump image right endpoints
    offsets: Optional[np.ndarray] = None  # image length accumulated before each

    @classmethod
    def of_gamma(cls, gam, fn=None):
        return cls(kind="of_gamma", gam=gam, fn=fn)

    @classmethod
    def flattened_brownian(cls, w2: BrownianPath, lam: TimeChangePath):
        """A Brownian path run on a clock that freezes on every jump image."""
        jumps = lam.jumps
        starts = np.array([a for _, a, _ in jumps])
        ends = np.array([b for _, _, b in jumps])
        offsets = np.concatenate(([0.0], np.cumsum(ends - starts)))[:-1]
        return cls(kind="flat_bm", w2=w2, starts=starts, ends=ends,
                   offsets=offsets)

    def _flat_clock(self, r):
        r = np.asarray(r, dtype=float)
        if self.starts.size == 0:
            return r.copy()
        # index of the last jump image starting at or before r
        j = np.searchsorted(self.starts, r, side="right") - 1
        out = r.copy()
        before = j < 0
        jj = np.clip(j, 0, None)
        inside = (~before) & (r < self.ends[jj])
        frozen = self.starts[jj] - self.offsets[jj]
        out[inside] = frozen[inside]
        after = (~before) & ~inside
        consumed = self.offsets[jj] + (self.ends[jj] - self.starts[jj])
        out[after] = (r - consumed)[after]
        return out

    def values(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "of_gamma":
            g = self.gam.eval(r)
            return np.asarray(g if self.fn is None else self.fn(g), dtype=float)
        if self.kind == "flat_bm":
            return np.asarray(self.w2.ensure(self._flat_clock(r)), dtype=float)
        raise ValueError(f"unknown process kind {self.kind!r}")

    def as_r_process(self) -> RAxisProcess:
        return RAxisProcess.from_callable(self.values)


def verify_jacod(part: str, lam: TimeChangePath, s_proc: LambdaAdaptedProcess,
                 t: float, dt: float, nu: Optional[IntegrandSpec] = None,
                 nut: Optional[RAxisProcess] = None, dr: Optional[float] = None,
                 check_adapted: bool = True, seed: Optional[int] = None) -> IntegralPair:
    """The two classical change-of-variable directions for an adapted S.

    part "i":   int_0^t nu dS_Lambda      vs  int_0^{Lambda_t} nu(Gamma_-) dS
    part "ii":  int_0^{Lambda_t} nut dS   vs  int_0^t nut(Lambda_-) dS_Lambda
    """
    if check_adapted:
        report = check_lambda_adapted(s_proc.as_r_process(), lam, t_end=t)
        if not report.passed:
            tau, dev = report.first_violation()
            raise NotLambdaAdapted(
                f"S varies by {dev:.3g} on the jump image at t={tau}", report=report)

    gam = lam.inverse()
    times, lam_w, lam_int, _ = lam_node_layout(lam, uniform_grid(t, dt))
    mask = times <= t + 1e-12
    times, lam_w, lam_int = times[mask], lam_w[mask], lam_int[mask]
    s_lam = s_proc.values(lam_w)

    r = market_grid(lam, t, dt if dr is None else dr)
    s_r = s_proc.values(r)

    if part == "i":
        if nu is None:
            raise ValueError("part i needs an IntegrandSpec")
        s_int = s_proc.values(lam_int)
        lhs = ito_sum(nu.values(times, lam_int, s_int), s_lam)
        tminus = gam.left_limit(r)
        lam_l = lam.left_limit(tminus)
        rhs = ito_sum(nu.values(tminus, lam_l, s_proc.values(lam_l)), s_r)
    elif part == "ii":
        if nut is None:
            raise ValueError("part ii needs an RAxisProcess")
        lhs = ito_sum(nut.values(r), s_r)
        rhs = ito_sum(nut.values(lam_int), s_lam)
    else:
        raise ValueError(f"part must be 'i' or 'ii', got {part!r}")
    return IntegralPair.of(lhs, rhs, dt, seed)


# ----------------------------------------------------------------------
# square-integrability gate
# ----------------------------------------------------------------------

def square_integrability_check(nu: IntegrandSpec, config: TimeChangeConfig,
                               t: float, dts, n_paths: int, seed: int):
    """Monte Carlo estimate of E[int nu^2 dLambda] across grid refinements.

    Returns (passed, estimates).  An integrand whose estimate keeps growing
    by more than 4x per refinement is flagged divergent and refused.
    """
    if nu.square_integrability_bound is not None:
        return True, []
    estimates = []
    for dt in dts:
        acc = 0.0
        for i in range(n_paths):
            lam = sample_timechange(config, seed, i)
            w = BrownianPath(config.range_end, rng=_rng.stream(seed, i, _rng.STREAM_W))
            tcp = time_changed_bm(w, lam, uniform_grid(t, dt))
            vals = nu.values(tcp.times, tcp.lam_int, tcp.m_int)
            acc += float(np.dot(vals[:-1] ** 2, np.diff(tcp.lam_w)))
        estimates.append(acc / n_paths)
    est = np.asarray(estimates)
    if not np.all(np.isfinite(est)):
        return False, estimates
    if len(est) >= 2 and np.all(np.diff(est) > 0) and est[-1] > 4.0 * est[0]:
        return False, estimates
    return True, estimates
