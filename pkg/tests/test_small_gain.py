import math

import numpy as np
import pytest

from smallgain.comparison import PowerLaw, exp_kl, identity, linear, plf, zero
from smallgain.errors import ContractionError, DomainError, PreconditionError
from smallgain.small_gain import (SmallGainData, attractivity_time, build_schedule,
                                  combined_measure, derived_constants, schedule_violations,
                                  split_sum_holds, sum_to_max_rewrite, synthesize_certificate)
from smallgain.trajectories import (IOSCertificate, MaxOf, Signal, SupNorm, Trajectory,
                                    ZeroMeasure, check_kl_practical_ios, check_output_bound)

from oracles import oracle_trajectory, sup_measure

STEP = 1e-4


def halving_data(**kw):
    args = dict(beta=exp_kl(), gamma=linear(0.5), sigma2=zero(), time_step=STEP)
    args.update(kw)
    return SmallGainData(**args)


# data and derived constants


def test_data_rejects_non_contraction():
    with pytest.raises(ContractionError) as exc:
        SmallGainData(exp_kl(), linear(2.0))
    assert exc.value.witness > 0


def test_floor_is_max_of_offsets():
    assert derived_constants(halving_data(C=1.0, r0=2.0)).floor == 2.0


def test_peak_of_exponential_is_identity():
    dc = derived_constants(halving_data())
    s = np.geomspace(1e-3, 1e3, 13)
    np.testing.assert_allclose(dc.peak(s), s)


def test_state_gain_and_offset():
    dc = derived_constants(halving_data(C=1.0, r0=2.0, d=1.0))
    s = np.geomspace(1e-3, 1e3, 13)
    np.testing.assert_allclose(dc.state_gain(s), s)
    assert dc.state_offset == 2.0


# decay schedules


def test_schedule_halving_times():
    sched = build_schedule(halving_data(), 1.0, depth=6)
    np.testing.assert_allclose(sched.levels[:3], [1.0, 0.5, 0.25])
    np.testing.assert_allclose(sched.bounds[:2], [1.0, 1.0])
    assert math.log(2) <= sched.waits[1] <= math.log(2) + STEP
    assert math.log(4) <= sched.waits[2] <= math.log(4) + STEP
    np.testing.assert_allclose(sched.elapsed, np.cumsum(sched.waits))
    assert schedule_violations(halving_data(), sched) == []


def test_schedule_levels_from_eight():
    sched = build_schedule(halving_data(), 8.0, depth=4)
    np.testing.assert_allclose(sched.levels, [8.0, 4.0, 2.0, 1.0, 0.5])


def test_schedule_stops_at_floor():
    sched = build_schedule(halving_data(r0=1.0), 8.0, depth=20)
    np.testing.assert_allclose(sched.levels, [8.0, 4.0, 2.0, 1.0])
    np.testing.assert_allclose(sched.clamped, [8.0, 4.0, 2.0, 1.0])


def test_schedule_zero_gain_halves():
    data = SmallGainData(exp_kl(), zero(), sigma2=zero(), time_step=STEP)
    sched = build_schedule(data, 2.0, depth=3)
    np.testing.assert_allclose(sched.levels, [2.0, 1.0, 0.5, 0.25])


def test_schedule_invariants_random():
    rng = np.random.default_rng(2)
    for _ in range(10):
        k, lam = rng.uniform(1, 4), rng.uniform(0.2, 3)
        g = plf([(0, 0), (1, rng.uniform(0.1, 0.9)), (10, rng.uniform(1, 9))])
        data = SmallGainData(exp_kl(k, lam), g, sigma1=linear(rng.uniform(1, 2)),
                             sigma2=linear(rng.uniform(0, 0.1)), d=rng.uniform(0, 0.5),
                             time_step=1e-2)
        sched = build_schedule(data, rng.uniform(0.1, 50), depth=30)
        assert schedule_violations(data, sched) == []
        assert np.all(np.diff(sched.levels) < 0)
        assert np.all(np.diff(sched.elapsed) >= 0)


def test_attractivity_time_examples():
    data = halving_data()
    sched = build_schedule(data, 8.0, depth=4)
    assert attractivity_time(data, sched, 3.0) == sched.elapsed[2]
    assert attractivity_time(data, sched, 9.0) == 0.0
    one = build_schedule(data, 1.0, depth=6)
    t = attractivity_time(data, one, 0.3)
    assert math.log(8) <= t <= math.log(8) + 2 * STEP


def test_attractivity_time_extends_schedule():
    data = halving_data()
    sched = build_schedule(data, 1.0, depth=2)
    t = attractivity_time(data, sched, 1e-3)
    assert t >= math.log(512)


def test_attractivity_time_below_floor_is_domain_error():
    data = halving_data(C=1.0)
    with pytest.raises(DomainError):
        attractivity_time(data, build_schedule(data, 1.0), 1.0)


# combined measure


def _measure_data(beta, sigma3, mu_a, mu_b):
    return SmallGainData(beta, linear(0.5), sigma3=sigma3, mu_a=mu_a, mu_b=mu_b)


def test_combined_measure_zero_input():
    t = np.linspace(0, 1, 5)
    m = combined_measure(_measure_data(exp_kl(), identity(), SupNorm((0,)), SupNorm((1,))))
    assert m(Signal(t, np.zeros((5, 2))), 0.0, 1.0) == 0.0


def test_combined_measure_output_channel_only():
    t = np.linspace(0, 1, 5)
    u = Signal(t, np.column_stack([np.full(5, 2.0), np.zeros(5)]))
    m = combined_measure(_measure_data(exp_kl(), identity(), SupNorm((0,)), SupNorm((1,))))
    assert m(u, 0.0, 1.0) == 2.0


def test_combined_measure_square_state_gain():
    t = np.linspace(0, 1, 5)
    u = Signal(t, np.column_stack([np.full(5, 1.0), np.full(5, 3.0)]))
    m = combined_measure(_measure_data(exp_kl(2.0), PowerLaw(1.0, 2.0), SupNorm((0,)),
                                       SupNorm((1,))))
    assert m(u, 0.0, 1.0) == 6.0


# synthesis


R_GRID = np.geomspace(1e-3, 1e3, 25)


def test_synthesis_constant_is_three_floor():
    data = halving_data(C=1.0, r0=2.0, time_step=1e-2)
    cert = synthesize_certificate(data, R_GRID, 2.0 + np.geomspace(1e-3, 1e3, 25))
    assert cert.C == 6.0


def test_synthesis_trivial_gain():
    data = SmallGainData(exp_kl(), linear(1e-12), sigma2=zero(), time_step=1e-2)
    eps = np.geomspace(1e-3, 1e3, 25)
    cert = synthesize_certificate(data, R_GRID, eps)
    assert cert.C == 0.0
    S, T = np.meshgrid(R_GRID, np.linspace(0, 10, 11), indexing="ij")
    assert np.all(cert.beta(S, T) >= S * np.exp(-T))


def test_synthesis_certificate_serializes():
    data = halving_data(time_step=1e-2)
    cert = synthesize_certificate(data, R_GRID, np.geomspace(1e-3, 1e3, 25))
    back = IOSCertificate.from_dict(cert.to_dict())
    S, T = np.meshgrid(R_GRID, np.linspace(0, 30, 7), indexing="ij")
    np.testing.assert_allclose(back.beta(S, T), cert.beta(S, T), rtol=1e-12)


# oracle trajectories


def _oracle(rng, n=120, dt=0.05, C=0.05):
    t = np.round(np.arange(n) * dt, 12)
    u = rng.uniform(0, 0.2) * rng.uniform(0, 1, n)
    tr = oracle_trajectory(rng, t, k=2.0, lam=1.0, gamma=lambda r: 0.5 * r,
                           sigma1=lambda s: s, sigma2=lambda s: 0.0, sigma3=lambda s: s,
                           C=C, d=0.0, x0=rng.uniform(0.5, 3.0), u=u)
    data = SmallGainData(exp_kl(2.0), linear(0.5), sigma2=zero(), C=C, mu_a=SupNorm(),
                         mu_b=ZeroMeasure(), time_step=1e-2)
    return tr, data


def test_oracle_satisfies_output_bound():
    rng = np.random.default_rng(4)
    tr, data = _oracle(rng)
    assert check_output_bound(tr, data.beta, data.gamma, data.mu_a, data.C).passed


def test_peak_bound_on_oracle_trajectories():
    # x(t0) <= r gives y(t) <= max{peak(r), |u|^a, floor} for all t >= t0
    rng = np.random.default_rng(8)
    for _ in range(4):
        tr, data = _oracle(rng)
        dc = derived_constants(data)
        mu = sup_measure(tr.u.values[:, 0])
        for i0 in range(0, tr.t.size, 10):
            rhs = np.maximum(np.maximum(dc.peak(tr.x[i0]), mu[i0, i0:]), dc.floor)
            assert np.all(tr.y[i0:] <= rhs * (1 + 1e-9) + 1e-12)


def test_level_induction_on_oracle_trajectories():
    # y(t) <= max{levels[i], |u|^m, floor} once t >= t0 + elapsed[i]
    rng = np.random.default_rng(9)
    for _ in range(4):
        tr, data = _oracle(rng)
        dc = derived_constants(data)
        m = combined_measure(data)
        for i0 in range(0, tr.t.size, 15):
            if tr.x[i0] <= 0:
                continue
            sched = build_schedule(data, float(tr.x[i0]), depth=12)
            run = m.running(tr.input, i0)
            for lvl, wait in zip(sched.levels, sched.elapsed):
                j = np.flatnonzero(tr.t[i0:] >= tr.t[i0] + wait - 1e-12)
                rhs = np.maximum(np.maximum(lvl, run[j]), dc.floor)
                assert np.all(tr.y[i0:][j] <= rhs * (1 + 1e-9) + 1e-12)


def test_oracle_trajectories_pass_synthesized_certificate():
    rng = np.random.default_rng(10)
    tr, data = _oracle(rng)
    floor = derived_constants(data).floor
    cert = synthesize_certificate(data, np.geomspace(1e-3, 1e3, 33),
                                  floor + np.geomspace(1e-3, 1e3, 33))
    assert check_kl_practical_ios(tr, cert).passed


# sums to maxima


def test_split_sum_examples():
    assert split_sum_holds(3.0, 1.0, identity())
    assert split_sum_holds(1.0, 3.0, identity())


def test_split_sum_random():
    rng = np.random.default_rng(12)
    rhos = [identity(), linear(0.1), linear(7.0), PowerLaw(1.0, 2.0), PowerLaw(2.0, 0.5)]
    a = rng.exponential(5.0, 10_000)
    b = rng.exponential(5.0, 10_000)
    which = rng.integers(0, len(rhos), 10_000)
    assert all(split_sum_holds(a[i], b[i], rhos[which[i]]) for i in range(10_000))


def test_sum_to_max_identity_margin():
    rw = sum_to_max_rewrite(exp_kl(), linear(0.25), identity(), 0.5)
    s = np.geomspace(1e-3, 1e3, 13)
    np.testing.assert_allclose(rw.alpha(s), 12 * s)
    np.testing.assert_allclose(rw.gamma_eff(s), s / 2)
    assert rw.C_eff == 6.0
    np.testing.assert_allclose(rw.beta_eff(2.0, 1.0), 24 * math.exp(-1.0))


def test_sum_to_max_requires_margin():
    with pytest.raises(PreconditionError):
        sum_to_max_rewrite(exp_kl(), linear(0.5), identity(), 0.0)


def test_sum_to_max_is_sound_on_corpus():
    rng = np.random.default_rng(13)
    beta, gamma, rho, C = exp_kl(1.5), linear(0.2), linear(2.0), 0.1
    rw = sum_to_max_rewrite(beta, gamma, rho, C)
    t = np.round(np.arange(80) * 0.05, 12)
    for _ in range(10):
        n = t.size
        x = rng.uniform(0.1, 3) * rng.uniform(0.5, 1, n)
        u = rng.uniform(0, 0.3) * rng.uniform(0, 1, n)
        mu = sup_measure(u)
        y = np.zeros(n)
        for i in range(n):
            rhs = [float(beta(x[a], t[i] - t[a])) + 0.2 * (y[a:i].max() if i > a else 0.0)
                   + mu[a, i] + C for a in range(i + 1)]
            y[i] = min(rhs) * rng.uniform(0.5, 1.0)
        tr = Trajectory(t, x, y, Signal(t, u))
        rep = check_output_bound(tr, rw.beta_eff, rw.gamma_eff, rw.measure(SupNorm()), rw.C_eff)
        assert rep.passed


def test_sum_to_max_data_is_contracting():
    rw = sum_to_max_rewrite(exp_kl(), linear(0.25), identity(), 0.0)
    data = rw.small_gain_data(0.0, identity(), zero(), identity(), 0.0, SupNorm(), ZeroMeasure())
    assert data.contraction.holds
    assert isinstance(data.mu_a, MaxOf)
