"""Left-point integration and the change-of-variable identity checks."""

import numpy as np
import pytest

import tcbm.rng as rng
from tcbm.errors import (GridMissingJump, InverseMismatch, NotLambdaAdapted)
from tcbm.noise import BrownianPath, TimeChangedPath, time_changed_bm
from tcbm.stochint import (IntegrandSpec, LambdaAdaptedProcess, RAxisProcess,
                           check_lambda_adapted, compose_with_inverse,
                           integrand_by_name, ito_integral_dm, ito_integral_dw,
                           ito_sum, market_grid, r_process_by_name,
                           square_integrability_check, uniform_grid,
                           verify_backward, verify_forward, verify_jacod)
from tcbm.timechange import (TimeChangeConfig, build_deterministic, identity,
                             sample_timechange)


def _w(seed, i=0):
    return BrownianPath(8.0, rng=rng.stream(seed, i, rng.STREAM_W))


JUMPY = build_deterministic(1.0, 8.0, jumps=[(0.31, 0.47), (0.69, 0.22)])


# ----------------------------------------------------------------------
# elementary sums
# ----------------------------------------------------------------------

def test_ito_sum_left_point():
    vals = np.array([1.0, 2.0, 5.0])
    driver = np.array([0.0, 1.0, -1.0])
    assert ito_sum(vals, driver) == 1.0 * 1.0 + 2.0 * (-2.0)


def test_ito_sum_algebraic_oracle():
    """Left-point sums of W dW satisfy (W_T^2 - sum dW^2)/2 exactly,
    on any partition."""
    w = _w(10)
    grid = np.sort(np.concatenate(([0.0], np.random.default_rng(0).uniform(0, 2, 500), [2.0])))
    wv = w.ensure(grid)
    lhs = ito_sum(wv, wv)
    rhs = 0.5 * (wv[-1] ** 2 - np.sum(np.diff(wv) ** 2))
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_ito_integral_dw_converges_to_ito_formula():
    # int_0^1 W dW = (W_1^2 - 1)/2; left-point error is O(sqrt(dt)) per path,
    # so test the mean over paths at a fine grid
    n = 300
    grid = uniform_grid(1.0, 2.0 ** -10)
    errs = np.empty(n)
    for i in range(n):
        w = _w(11, i)
        proc = RAxisProcess.of_w(w)
        w.refine(grid)
        val = ito_integral_dw(proc, w, grid)
        errs[i] = val - 0.5 * (w.value_at(1.0) ** 2 - 1.0)
    assert abs(errs.mean()) <= 3.0 * errs.std(ddof=1) / np.sqrt(n)
    assert np.sqrt(np.mean(errs ** 2)) < 0.1


def test_ito_integral_dm_requires_jump_nodes():
    w = _w(12)
    tcp = time_changed_bm(w, JUMPY, uniform_grid(1.0, 0.125))
    # strip the jump nodes to simulate a broken grid
    keep = ~np.isclose(tcp.times, 0.31)
    broken = TimeChangedPath(times=tcp.times[keep], values=tcp.values[keep],
                             lam_w=tcp.lam_w[keep], lam_int=tcp.lam_int[keep],
                             m_int=tcp.m_int[keep],
                             is_jump_left=tcp.is_jump_left[keep],
                             lam=tcp.lam, w=tcp.w)
    with pytest.raises(GridMissingJump):
        ito_integral_dm(integrand_by_name("constant"), broken, 1.0)


# ----------------------------------------------------------------------
# grids
# ----------------------------------------------------------------------

def test_uniform_grid_hits_endpoint():
    g = uniform_grid(1.0, 0.3)
    assert g[0] == 0.0 and g[-1] == 1.0
    assert np.all(np.diff(g) > 0)


def test_market_grid_contains_jump_images():
    r = market_grid(JUMPY, 1.0, 0.1)
    for val in (0.31, 0.78, 1.16, 1.38):  # jump image endpoints
        assert np.any(np.isclose(r, val, atol=1e-12))
    assert r[-1] == pytest.approx(JUMPY.eval(1.0))


# ----------------------------------------------------------------------
# adaptedness
# ----------------------------------------------------------------------

def test_gamma_process_is_adapted():
    gam = JUMPY.inverse()
    rep = check_lambda_adapted(r_process_by_name("gamma", gam=gam), JUMPY)
    assert rep.passed and not rep.violations


def test_raw_clock_is_not_adapted():
    rep = check_lambda_adapted(r_process_by_name("r"), JUMPY)
    assert not rep.passed
    tau, dev = rep.first_violation()
    assert tau == pytest.approx(0.31)
    assert dev == pytest.approx(0.47)  # varies by the jump size on the image


def test_backward_gate_raises_with_report():
    w = _w(13)
    with pytest.raises(NotLambdaAdapted) as exc:
        verify_backward(r_process_by_name("r"), JUMPY, w, 1.0, 2.0 ** -5)
    assert exc.value.report is not None
    assert not exc.value.report.passed


def test_constant_is_adapted_everywhere():
    rep = check_lambda_adapted(RAxisProcess.constant(3.0), JUMPY)
    assert rep.passed


# ----------------------------------------------------------------------
# composition with the inverse
# ----------------------------------------------------------------------

def test_compose_with_wrong_inverse_rejected():
    other = identity(1.0).inverse()
    w = _w(14)
    with pytest.raises(InverseMismatch):
        compose_with_inverse(integrand_by_name("time"), JUMPY, other, w)


def test_composed_integrand_flat_on_jump_images():
    gam = JUMPY.inverse()
    w = _w(15)
    comp = compose_with_inverse(integrand_by_name("time"), JUMPY, gam, w)
    r = np.linspace(0.31, 0.78, 9)  # first jump image
    vals = comp.values(r)
    assert np.max(np.abs(vals - vals[0])) <= 1e-12


# ----------------------------------------------------------------------
# identity checks
# ----------------------------------------------------------------------

def test_forward_constant_exact():
    w = _w(16)
    pair = verify_forward(integrand_by_name("constant"), JUMPY, w, 1.0, 2.0 ** -5)
    assert pair.abs_diff <= 1e-12


def test_forward_shared_grid_exact_for_deterministic_data():
    # on the image grid both sides telescope identically for integrands of
    # deterministic path data
    for case in ("constant", "time", "lambda_left"):
        w = _w(17)
        pair = verify_forward(integrand_by_name(case), JUMPY, w, 1.0, 2.0 ** -6,
                              shared_grid=True)
        assert pair.abs_diff <= 1e-12, case


def test_forward_stochastic_integrand_converges():
    diffs = []
    for dt in (2.0 ** -5, 2.0 ** -7, 2.0 ** -9):
        acc = 0.0
        for i in range(40):
            lam = sample_timechange(TimeChangeConfig(horizon=1.0, jump_count=2), 18, i)
            w = _w(18, i)
            acc += verify_forward(integrand_by_name("m_left"), lam, w, 1.0, dt).abs_diff ** 2
        diffs.append(np.sqrt(acc / 40))
    assert diffs[2] < diffs[0]


def test_backward_adapted_cases_converge():
    for case in ("gamma", "gamma_sq"):
        diffs = []
        for dt in (2.0 ** -5, 2.0 ** -9):
            acc = 0.0
            for i in range(40):
                lam = sample_timechange(TimeChangeConfig(horizon=1.0, jump_count=2), 19, i)
                gam = lam.inverse()
                w = _w(19, i)
                acc += verify_backward(r_process_by_name(case, gam=gam),
                                       lam, w, 1.0, dt).abs_diff ** 2
            diffs.append(np.sqrt(acc / 40))
        assert diffs[1] < diffs[0], case


def test_backward_nonadapted_has_jump_sized_error():
    lam = JUMPY
    w = _w(20)
    pair = verify_backward(r_process_by_name("r"), lam, w, 1.0, 2.0 ** -9,
                           enforce_adapted=False)
    # the identity fails by an amount driven by the jump contribution
    assert pair.abs_diff > 1e-3


def test_jacod_constant_exact_both_parts():
    w2 = _w(21)
    s = LambdaAdaptedProcess.flattened_brownian(w2, JUMPY)
    pi = verify_jacod("i", JUMPY, s, 1.0, 2.0 ** -6,
                      nu=integrand_by_name("constant"))
    pii = verify_jacod("ii", JUMPY, s, 1.0, 2.0 ** -6,
                       nut=RAxisProcess.constant(1.0))
    assert pi.abs_diff <= 1e-12
    assert pii.abs_diff <= 1e-12


def test_flattened_brownian_is_adapted():
    w2 = _w(22)
    s = LambdaAdaptedProcess.flattened_brownian(w2, JUMPY)
    rep = check_lambda_adapted(s.as_r_process(), JUMPY)
    assert rep.passed


def test_jacod_rejects_nonadapted_s():
    w2 = _w(23)
    # raw Brownian S is not constant on jump images
    s = LambdaAdaptedProcess(kind="flat_bm", w2=w2,
                             starts=np.empty(0), ends=np.empty(0),
                             offsets=np.empty(0))
    # that S has no flats at all; wrap the raw driver instead

    class Raw:
        def as_r_process(self):
            return RAxisProcess.of_w(w2)

        def values(self, r):
            return w2.ensure(r)

    with pytest.raises(NotLambdaAdapted):
        verify_jacod("ii", JUMPY, Raw(), 1.0, 2.0 ** -5,
                     nut=RAxisProcess.constant(1.0))


# ----------------------------------------------------------------------
# square integrability gate
# ----------------------------------------------------------------------

def test_square_integrability_analytic_shortcut():
    ok, est = square_integrability_check(
        integrand_by_name("constant"), TimeChangeConfig(horizon=1.0), 1.0,
        [0.1, 0.05], 5, 1)
    assert ok and est == []


def test_square_integrability_flags_divergence():
    nu = IntegrandSpec.of_time(lambda s: 1.0 / np.maximum(1.0 - s, 1e-12))
    ok, est = square_integrability_check(
        nu, TimeChangeConfig(horizon=1.0, jump_count=0), 1.0,
        [2.0 ** -4, 2.0 ** -6, 2.0 ** -8, 2.0 ** -10], 3, 2)
    assert not ok
    assert est[-1] > 4.0 * est[0]


def test_square_integrability_accepts_bounded_callback():
    nu = IntegrandSpec.callback(lambda ts, ls, ms, s: np.sin(s))
    ok, est = square_integrability_check(
        nu, TimeChangeConfig(horizon=1.0, jump_count=0), 1.0,
        [2.0 ** -4, 2.0 ** -6], 3, 3)
    assert ok
