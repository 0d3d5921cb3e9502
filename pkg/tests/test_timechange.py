"""Time-change construction, evaluation, inversion and sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcbm.errors import (InvalidConfig, NonMonotone, NonzeroOrigin,
                         OutOfDomain, RangeExceeded, TooManyJumps)
from tcbm.timechange import (TimeChangeConfig, TimeChangePath, affine,
                             build_deterministic, from_samples, identity,
                             sample_timechange)


# ----------------------------------------------------------------------
# construction and validation
# ----------------------------------------------------------------------

def test_identity_path():
    lam = identity(1.0)
    assert lam.eval(0.0) == 0.0
    assert lam.eval(0.37) == pytest.approx(0.37, abs=1e-15)
    assert lam.final_value == 1.0
    assert lam.strictly_increasing
    assert len(lam.jumps) == 0


def test_nonzero_origin_rejected():
    with pytest.raises(NonzeroOrigin):
        TimeChangePath.from_breakpoints([0.0, 1.0], [0.5, 1.0], [0.5, 1.0], 2.0)
    with pytest.raises(NonzeroOrigin):
        TimeChangePath.from_breakpoints([0.1, 1.0], [0.0, 1.0], [0.0, 1.0], 2.0)


def test_decreasing_rejected():
    with pytest.raises(NonMonotone):
        TimeChangePath.from_breakpoints([0.0, 1.0], [0.0, -0.5], [0.0, -0.5], 2.0)
    with pytest.raises(NonMonotone):
        # right value below left value at a breakpoint
        TimeChangePath.from_breakpoints([0.0, 0.5, 1.0], [0.0, 0.6, 1.0],
                                        [0.0, 0.4, 1.0], 2.0)


def test_range_exceeded():
    with pytest.raises(RangeExceeded):
        affine(3.0, 1.0, range_end=2.0)


def test_too_many_jumps():
    jumps = [(0.01 + 0.02 * k, 0.01) for k in range(40)]
    with pytest.raises(TooManyJumps):
        build_deterministic(1.0, 8.0, jumps=jumps)


def test_eval_out_of_domain():
    lam = identity(1.0)
    with pytest.raises(OutOfDomain):
        lam.eval(1.5)
    with pytest.raises(OutOfDomain):
        lam.left_limit(-0.5)


# ----------------------------------------------------------------------
# jump semantics
# ----------------------------------------------------------------------

def test_right_continuity_at_jump():
    lam = build_deterministic(1.0, 8.0, jumps=[(0.3, 0.5)])
    assert lam.eval(0.3) == pytest.approx(0.8, abs=1e-15)
    assert lam.left_limit(0.3) == pytest.approx(0.3, abs=1e-15)
    assert lam.eval(0.3 - 1e-9) == pytest.approx(0.3, abs=1e-8)
    assert lam.jumps == [(0.3, 0.3, 0.8)]
    assert lam.strictly_increasing


def test_flat_segment_not_strict():
    # flat on [0.5, 1]: left value at 1 equals right value at 0.5
    lam = TimeChangePath.from_breakpoints([0.0, 0.5, 1.0], [0.0, 0.5, 0.5],
                                          [0.0, 0.5, 0.5], 2.0)
    assert not lam.strictly_increasing
    assert lam.eval(0.75) == pytest.approx(0.5)


def test_csv_rows_mark_jumps():
    lam = build_deterministic(1.0, 8.0, jumps=[(0.4, 0.2)])
    rows = lam.to_csv_rows()
    jump_rows = [r for r in rows if r[2] or r[3]]
    assert len(jump_rows) == 2
    assert jump_rows[0] == pytest.approx((0.4, 0.4, 1, 0))
    assert jump_rows[1] == pytest.approx((0.4, 0.6, 0, 1))


# ----------------------------------------------------------------------
# generalized inverse
# ----------------------------------------------------------------------

def test_inverse_one_jump_hand_derived():
    """Drift 1 with one 0.5-jump at 0.3, range end 2: the inverse is
    r on [0, 0.3], flat 0.3 on [0.3, 0.8], r - 0.5 on [0.8, 1.5], flat 1
    on [1.5, 2]."""
    lam = build_deterministic(1.0, 2.0, jumps=[(0.3, 0.5)])
    gam = lam.inverse()
    r = np.linspace(0.0, 2.0, 10_001)
    expected = np.where(r < 0.3, r,
               np.where(r < 0.8, 0.3,
               np.where(r < 1.5, r - 0.5, 1.0)))
    assert np.max(np.abs(gam.eval(r) - expected)) <= 1e-12


def test_inverse_roundtrip_strictly_increasing():
    lam = build_deterministic(1.0, 8.0, jumps=[(0.25, 0.3), (0.6, 0.1)])
    gam = lam.inverse()
    t = np.linspace(0.0, 1.0, 10_001)
    assert np.max(np.abs(gam.eval(lam.eval(t)) - t)) <= 1e-10


def test_inverse_of_inverse_recovers_path():
    # with no trailing flat (range end = final value) inversion is involutive
    lam = build_deterministic(1.0, 1.75, slope=1.0, jumps=[(0.3, 0.5), (0.7, 0.25)])
    back = lam.inverse().inverse()
    assert np.allclose(back.times, lam.times, atol=1e-14)
    assert np.allclose(back.left_values, lam.left_values, atol=1e-14)
    assert np.allclose(back.right_values, lam.right_values, atol=1e-14)


def test_flat_becomes_jump():
    lam = TimeChangePath.from_breakpoints([0.0, 0.4, 0.6, 1.0],
                                          [0.0, 0.4, 0.4, 0.8],
                                          [0.0, 0.4, 0.4, 0.8], 0.8)
    gam = lam.inverse()
    assert len(gam.jumps) == 1
    tau, a, b = gam.jumps[0]
    assert (tau, a, b) == pytest.approx((0.4, 0.4, 0.6))


def test_inverse_continuous_iff_strictly_increasing():
    strict = build_deterministic(1.0, 8.0, jumps=[(0.5, 0.25)])
    assert len(strict.inverse().jumps) == 0
    flat = TimeChangePath.from_breakpoints([0.0, 0.4, 0.6, 1.0],
                                           [0.0, 0.4, 0.4, 1.0],
                                           [0.0, 0.4, 0.4, 1.0], 2.0)
    assert len(flat.inverse().jumps) > 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=5, unique=True),
       st.floats(0.2, 2.0))
def test_inverse_roundtrip_random_samples(points, slope):
    times = np.concatenate(([0.0], np.sort(points), [1.0]))
    values = slope * times
    lam = from_samples(times, values, range_end=slope + 1.0)
    gam = lam.inverse()
    t = np.linspace(0.0, 1.0, 101)
    assert np.max(np.abs(gam.eval(lam.eval(t)) - t)) <= 1e-10


# ----------------------------------------------------------------------
# sampling
# ----------------------------------------------------------------------

def test_sampler_deterministic():
    cfg = TimeChangeConfig(horizon=1.0, jump_count=3)
    a = sample_timechange(cfg, 123, 7)
    b = sample_timechange(cfg, 123, 7)
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.right_values, b.right_values)
    c = sample_timechange(cfg, 123, 8)
    assert not np.array_equal(a.times, c.times)


def test_sampler_respects_config():
    cfg = TimeChangeConfig(horizon=1.0, jump_count=3, min_jump_gap=0.02)
    for i in range(50):
        lam = sample_timechange(cfg, 5, i)
        assert len(lam.jumps) == 3
        assert lam.final_value <= cfg.range_end
        assert lam.strictly_increasing
        taus = np.concatenate(([0.0], lam.jump_times, [1.0]))
        assert np.min(np.diff(taus)) >= cfg.min_jump_gap


def test_sampler_poisson_count_truncated():
    cfg = TimeChangeConfig(horizon=1.0, poisson_rate=2.0)
    counts = [len(sample_timechange(cfg, 9, i).jumps) for i in range(200)]
    assert max(counts) <= cfg.n_max
    assert np.mean(counts) == pytest.approx(2.0, abs=0.5)


def test_config_validation():
    with pytest.raises(InvalidConfig):
        TimeChangeConfig(horizon=-1.0).validate()
    with pytest.raises(InvalidConfig):
        TimeChangeConfig(jump_count=2, poisson_rate=1.0).validate()
    with pytest.raises(InvalidConfig):
        TimeChangeConfig(jump_size_dist="pareto").validate()
    with pytest.raises(InvalidConfig):
        TimeChangeConfig(drift_slope=10.0, range_end=5.0).validate()


def test_mean_final_value():
    cfg = TimeChangeConfig(horizon=1.0, drift_slope=1.0, poisson_rate=2.0,
                           jump_size_mean=0.25)
    assert cfg.mean_final_value == pytest.approx(1.5)
