import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smallgain.comparison import exp_kl, identity, linear, zero
from smallgain.errors import DataError, HorizonError, IntervalError
from smallgain.kl_synthesis import kl_to_practical
from smallgain.trajectories import (IntegralNorm, IOSCertificate, MaxOf, Signal, SupNorm,
                                    Trajectory, ZeroMeasure, check_kl_practical_ios,
                                    check_output_bound, check_practical_ios, check_state_bound,
                                    measure_from_dict, read_csv, select_rows, sup_on_interval,
                                    write_csv)

from oracles import sup_measure


def traj_of(t, x, y, u=None, tau=math.inf):
    t = np.asarray(t, dtype=float)
    sig = None if u is None else Signal(t, np.asarray(u, dtype=float))
    return Trajectory(t, x, y, sig, tau)


def grid(T, dt):
    return np.round(np.arange(0.0, T + dt / 2, dt), 12)


# trajectories


def test_trajectory_rejects_bad_grids():
    with pytest.raises(DataError):
        Trajectory([0.5, 1.0], [0, 0], [0, 0])
    with pytest.raises(DataError):
        Trajectory([0.0, 1.0, 1.0], [0, 0, 0], [0, 0, 0])
    with pytest.raises(DataError):
        Trajectory([0.0, 1.0], [0, 0], [0, 0], tau=1.0)
    with pytest.raises(DataError):
        Trajectory([0.0, 1.0], [0, -1], [0, 0])


def test_csv_round_trip(tmp_path):
    t = grid(1.0, 0.1)
    tr = traj_of(t, np.exp(-t), t * np.exp(-t), np.column_stack([np.sin(t), np.cos(t)]))
    write_csv(tr, tmp_path / "tr.csv")
    back = read_csv(tmp_path / "tr.csv")
    np.testing.assert_array_equal(back.t, tr.t)
    np.testing.assert_array_equal(back.x, tr.x)
    np.testing.assert_array_equal(back.y, tr.y)
    np.testing.assert_array_equal(back.u.values, tr.u.values)


def test_dict_round_trip():
    t = grid(1.0, 0.25)
    tr = traj_of(t, t, 2 * t, tau=5.0)
    back = Trajectory.from_dict(tr.to_dict())
    assert back.tau == 5.0 and back.u is None
    np.testing.assert_array_equal(back.y, tr.y)


# interval suprema


def test_sup_of_constant():
    t = grid(5.0, 0.5)
    tr = traj_of(t, np.zeros_like(t), np.full_like(t, 3.0))
    assert sup_on_interval(tr, "y", 1.2, 3.7) == 3.0


def test_sup_of_decreasing_is_left_value():
    t = grid(3.0, 0.01)
    tr = traj_of(t, np.zeros_like(t), np.exp(-t))
    assert sup_on_interval(tr, "y", 0.0, 2.0) == 1.0


def test_sup_of_hump():
    t = grid(3.0, 0.01)
    tr = traj_of(t, np.zeros_like(t), t * np.exp(-t))
    np.testing.assert_allclose(sup_on_interval(tr, "y", 0.0, 3.0), math.exp(-1.0), atol=1e-4)


def test_sup_snaps_outward():
    t = np.array([0.0, 1.0, 2.0, 3.0])
    tr = traj_of(t, np.zeros(4), [0.0, 5.0, 1.0, 7.0])
    assert sup_on_interval(tr, "y", 1.5, 1.6) == 5.0
    assert sup_on_interval(tr, "y", 2.0, 2.0) == 1.0


def test_sup_errors():
    t = grid(2.0, 0.5)
    tr = traj_of(t, t, t, tau=3.0)
    with pytest.raises(IntervalError):
        sup_on_interval(tr, "y", 1.0, 0.5)
    with pytest.raises(HorizonError):
        sup_on_interval(tr, "y", 0.0, 3.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=5, max_size=40),
       st.lists(st.floats(0, 1), min_size=4, max_size=4))
def test_sup_monotone_in_inclusion(ys, cuts):
    t = np.arange(len(ys), dtype=float)
    tr = traj_of(t, np.zeros(len(ys)), ys)
    c, a, b, d = np.sort(np.asarray(cuts) * t[-1])
    assert sup_on_interval(tr, "y", a, b) <= sup_on_interval(tr, "y", c, d)


# input measures


MEASURES = [SupNorm(), IntegralNorm(), ZeroMeasure(), SupNorm((1,)),
            MaxOf(((linear(2.0), SupNorm((0,))), (identity(), IntegralNorm((1,)))))]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=12, max_size=12),
       st.lists(st.floats(0, 1), min_size=4, max_size=4), st.sampled_from(range(len(MEASURES))))
def test_measures_are_monotone_on_nested_intervals(vals, cuts, k):
    t = np.linspace(0.0, 3.0, 6)
    u = Signal(t, np.reshape(vals, (6, 2)))
    a, b, c, d = np.sort(np.asarray(cuts) * 3.0)
    inner, outer = MEASURES[k](u, b, c), MEASURES[k](u, a, d)
    assert inner <= outer * (1 + 1e-12) + 1e-12


def test_sup_measure_matches_table():
    rng = np.random.default_rng(3)
    t = np.arange(15, dtype=float)
    u = rng.normal(size=15)
    table = sup_measure(u)
    run = SupNorm().running(Signal(t, u), 4)
    np.testing.assert_array_equal(run, table[4, 4:])


def test_integral_measure_of_constant():
    t = grid(2.0, 0.1)
    u = Signal(t, np.full(t.size, 3.0))
    np.testing.assert_allclose(IntegralNorm()(u, 0.5, 1.5), 3.0, rtol=1e-9)


@pytest.mark.parametrize("m", MEASURES)
def test_measure_serialization(m):
    t = np.linspace(0.0, 2.0, 9)
    u = Signal(t, np.column_stack([np.sin(3 * t), t - 1]))
    np.testing.assert_allclose(measure_from_dict(m.to_dict()).running(u, 2), m.running(u, 2))


# output bound


def test_output_bound_zero_output_passes():
    t = grid(2.0, 0.1)
    tr = traj_of(t, np.ones_like(t), np.zeros_like(t))
    rep = check_output_bound(tr, exp_kl(), linear(0.5), SupNorm(), 0.0)
    assert rep.passed and rep.margin >= 0


def test_output_bound_constant_five_fails():
    t = grid(2.0, 0.1)
    tr = traj_of(t, np.zeros_like(t), np.full_like(t, 5.0))
    rep = check_output_bound(tr, exp_kl(), linear(0.5), ZeroMeasure(), 0.0)
    assert not rep.passed
    np.testing.assert_allclose(rep.margin, 2.5 - 5.0)
    assert rep.first_violation == (0.0, 0.0)


def _forced_decay(dt=1e-3, T=5.0):
    # y' = -y + 1, y(0) = 2 gives y = 1 + exp(-t); the state is the output
    t = grid(T, dt)
    y = 1.0 + np.exp(-t)
    return traj_of(t, y, y, np.ones_like(t))


def test_output_bound_forced_decay_needs_larger_transient():
    tr = _forced_decay()
    rep = check_output_bound(tr, exp_kl(1.0), zero(), SupNorm(), 0.0, starts=[0])
    assert not rep.passed
    # at t = ln(4/3): y = 1.75 while max{2 exp(-t), 1} = 1.5
    t_star = math.log(4 / 3)
    assert 1 + math.exp(-t_star) > max(2 * math.exp(-t_star), 1.0)
    # the gap 1 + exp(-t) - max{2 exp(-t), 1} peaks at t = ln 2 with value 1/2
    np.testing.assert_allclose(rep.margin, -0.5, atol=1e-3)
    np.testing.assert_allclose(rep.worst_pair[1], math.log(2), atol=1e-3)


def test_output_bound_forced_decay_corrected_certificate():
    tr = _forced_decay(dt=1e-2)
    assert check_output_bound(tr, exp_kl(2.0), zero(), MaxOf(((linear(2.0), SupNorm()),)),
                              0.0).passed


# state bound


def test_state_bound_state_equals_output():
    t = grid(3.0, 0.1)
    s = 2 + np.sin(3 * t)
    tr = traj_of(t, s, s)
    assert check_state_bound(tr, zero(), zero(), identity(), ZeroMeasure(), 0.0).passed


def test_state_bound_ramp_fails_at_one_three():
    t = grid(10.0, 1.0)
    tr = traj_of(t, t, np.zeros_like(t))
    rep = check_state_bound(tr, identity(), identity(), zero(), ZeroMeasure(), 0.0)
    assert not rep.passed
    # x(3) = 3 > max{x(1), 3 - 1} = 2
    assert 3.0 > max(1.0, 2.0)
    assert rep.first_violation == (1.0, 2.0)
    assert rep.worst_pair == (5.0, 10.0)
    one_three = check_state_bound(tr, identity(), identity(), zero(), ZeroMeasure(), 0.0,
                                  starts=[1])
    assert one_three.first_violation == (1.0, 2.0) and one_three.violations == 9


def test_state_bound_dominated_by_offset():
    rng = np.random.default_rng(0)
    t = grid(5.0, 0.1)
    tr = traj_of(t, rng.uniform(0, 2, t.size), rng.uniform(0, 9, t.size))
    assert check_state_bound(tr, zero(), zero(), zero(), ZeroMeasure(), 2.0).passed


# KL-practical bound


def test_kl_bound_zero_and_constant_outputs():
    t = grid(3.0, 0.1)
    cert = IOSCertificate(exp_kl(), ZeroMeasure(), 1.5)
    x = np.zeros_like(t)
    assert check_kl_practical_ios(traj_of(t, x, np.zeros_like(t)), cert).passed
    assert check_kl_practical_ios(traj_of(t, x, np.full_like(t, 1.5)), cert).passed


def test_kl_bound_exponential_decay():
    t = grid(5.0, 0.01)
    y = 3.0 * np.exp(-t)
    tr = traj_of(t, y, y)
    rep = check_kl_practical_ios(tr, IOSCertificate(exp_kl(), ZeroMeasure(), 0.0))
    assert rep.passed
    assert rep.margin >= -1e-12


def test_kl_bound_starts_restricts_pairs():
    t = grid(1.0, 0.1)
    y = np.exp(-t)
    tr = traj_of(t, y, y)
    cert = IOSCertificate(exp_kl(), ZeroMeasure(), 0.0)
    assert check_kl_practical_ios(tr, cert, starts=[0]).pairs_checked == t.size


def test_select_rows_full_below_limit():
    t = grid(1.0, 0.01)
    tr = traj_of(t, t, t)
    np.testing.assert_array_equal(select_rows(tr, 2000), np.arange(t.size))
    rows = select_rows(tr, 20)
    assert rows[0] == 0 and rows[-1] == t.size - 1 and rows.size < t.size


# practical IOS


def _log_table(eps, r):
    return math.log(r / eps) if eps < r else 0.0


def test_practical_zero_output():
    t = grid(3.0, 0.1)
    tr = traj_of(t, np.ones_like(t), np.zeros_like(t))
    assert check_practical_ios(tr, identity(), _log_table, ZeroMeasure(), 0.0).passed


def test_practical_exponential_decay():
    t = grid(6.0, 0.01)
    y = np.exp(-t)
    tr = traj_of(t, y, y)
    rep = check_practical_ios(tr, identity(), _log_table, ZeroMeasure(), 0.0)
    assert rep.passed and rep.failed_clause is None
    assert rep.attractivity.pairs_checked > 0


def test_practical_constant_above_offset_fails_attractivity():
    C = 1.0
    t = grid(5.0, 0.1)
    tr = traj_of(t, np.full_like(t, 2 * C), np.full_like(t, 2 * C))
    rep = check_practical_ios(tr, linear(0.1), lambda e, r: 1.0, ZeroMeasure(), C,
                              eps_probes=[1.5 * C], r_probes=[2 * C])
    assert not rep.passed
    assert rep.failed_clause == "attractivity"


def _kl_corpus_member(rng, t, k, C):
    n = t.size
    x = rng.uniform(0.0, 3.0) * np.exp(-rng.uniform(0, 1) * t) * rng.uniform(0.5, 1.0, n)
    u = rng.uniform(0, 0.5) * rng.uniform(0, 1, n)
    mu = sup_measure(u)
    y = np.zeros(n)
    for i in range(n):
        rhs = [max(k * x[a] * math.exp(-(t[i] - t[a])), mu[a, i], C) for a in range(i + 1)]
        y[i] = min(rhs) * rng.uniform(0.5, 1.0)
    return traj_of(t, x, y, u)


def test_kl_pass_implies_practical_pass():
    rng = np.random.default_rng(11)
    t = grid(4.0, 0.1)
    for trial in range(12):
        k, C = rng.uniform(1, 3), [0.0, 0.2][trial % 2]
        cert = IOSCertificate(exp_kl(k), SupNorm(), C)
        tr = _kl_corpus_member(rng, t, k, C)
        assert check_kl_practical_ios(tr, cert).passed
        delta, table = kl_to_practical(cert, time_step=1e-2)
        rep = check_practical_ios(tr, delta, table, cert.mu, cert.C)
        assert rep.passed, (trial, rep.failed_clause)
