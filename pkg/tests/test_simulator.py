import math

import numpy as np
import pytest

from erlang_sstar.model import validate
from erlang_sstar.simulator import (
    EventLog,
    EventTag,
    SimConfig,
    SimState,
    TruncationError,
    UniformStream,
    derive_rng,
    replicate,
    resample,
    rolling_moments,
    run,
    stationary_oracle,
    step,
)

OL = validate(100, 1, 1, 0.5, 1, 100)
UL = validate(100, 5, 1, 0.1, 0.5, 100)
SMALL = validate(2, 1, 1, 0.5, 1, 2)


def assert_conserved(result):
    counts = result.counts
    q0 = result.config.initial_q
    s0 = result.config.initial_s
    if s0 is None:
        s0 = int(result.config.params.c)
    assert counts.arrivals == (
        counts.completions + counts.abandonments + (result.final_q - q0)
    )
    charging_start = int(result.config.params.c) - s0
    charging_end = int(result.config.params.c) - result.final_s
    assert counts.charge_departures - counts.charge_returns == charging_end - charging_start


def test_step_from_empty_system_only_arrivals():
    stream = UniformStream(derive_rng(1, 0))
    state = SimState(0, int(SMALL.c), 0.0)
    for _ in range(50):
        new_state, tag, holding = step(state, SMALL, stream)
        assert tag is EventTag.ARRIVAL
        assert (new_state.q, new_state.s) == (state.q + 1, state.s)
        assert holding > 0
        state = SimState(0, int(SMALL.c), new_state.clock)  # reset q, keep time


def test_step_forced_charging_when_p_is_one():
    params = validate(5, 1, 1, 1.0, 1, 5)
    stream = UniformStream(derive_rng(2, 0))
    state = SimState(5, 3, 0.0)
    seen_service = 0
    for _ in range(500):
        new_state, tag, _ = step(state, params, stream)
        if tag is EventTag.SERVICE:
            seen_service += 1
            assert new_state.q == state.q - 1
            assert new_state.s == state.s - 1
        state = SimState(5, 3, new_state.clock)  # hold the state fixed
    assert seen_service > 50


def test_step_matches_run_event_for_event():
    config = SimConfig(params=validate(5, 1, 1, 0.5, 1, 3), n_customers=2_000,
                       warmup=0.0, seed=11, record_events=True)
    result = run(config)
    log = result.event_log
    stream = UniformStream(derive_rng(config.seed, config.replication_index))
    state = SimState(0, 3, 0.0)
    for i in range(len(log.times)):
        state, tag, _ = step(state, config.params, stream)
        assert state.clock == pytest.approx(log.times[i], rel=0, abs=1e-12)
        assert (state.q, state.s, int(tag)) == (log.q[i], log.s[i], log.tags[i])


def test_run_is_deterministic():
    config = SimConfig(params=OL, n_customers=5_000, seed=9)
    a, b = run(config), run(config)
    assert a.counts == b.counts
    assert a.time_averages == b.time_averages
    assert a.t_end == b.t_end


def test_distinct_replications_differ():
    config = SimConfig(params=OL, n_customers=5_000, seed=9)
    from dataclasses import replace
    a = run(config)
    b = run(replace(config, replication_index=1))
    assert a.counts != b.counts


def test_conservation_across_regimes(rng):
    for params in (OL, UL, SMALL):
        for seed in (0, 1, 2):
            result = run(SimConfig(params=params, n_customers=4_000, seed=seed))
            assert_conserved(result)


def test_run_time_average_matches_ul_fluid():
    summary = replicate(SimConfig(params=UL, n_customers=6_250, seed=5), 16)
    for key, target in (("mean_q", 20.0), ("mean_s", 80.0)):
        metric = summary.metrics[key]
        assert abs(metric.mean - target) < 3 * metric.halfwidth


def test_run_event_rates_match_overloaded_flow_balance():
    # completions/time -> mu*s* and abandonments/time -> theta*(q*-s*)
    result = run(SimConfig(params=OL, n_customers=50_000, seed=3))
    duration = result.t_end - result.stats_start
    s_star = 100 / 1.5
    completion_rate = result.post_counts.completions / duration
    abandon_rate = result.post_counts.abandonments / duration
    assert completion_rate == pytest.approx(1.0 * s_star, rel=0.05)
    assert abandon_rate == pytest.approx(1.0 * (100 - s_star), rel=0.05)


def test_flow_balance_in_steady_state():
    result = run(SimConfig(params=OL, n_customers=50_000, seed=12))
    duration = result.t_end - result.stats_start
    arrival_rate = result.post_counts.arrivals / duration
    out_rate = (result.post_counts.completions + result.post_counts.abandonments) / duration
    assert abs(arrival_rate - out_rate) / OL.lam < 0.01


def test_huge_abandonment_rate_empties_the_queue_head():
    params = validate(5, 1, 500, 0.5, 1, 2)
    result = run(SimConfig(params=params, n_customers=20_000, seed=8))
    assert result.time_averages.mean_excess < 0.05


def test_warmup_count_rule_discards_exact_prefix():
    config = SimConfig(params=OL, n_customers=10_000, warmup=0.2, seed=21)
    result = run(config)
    assert result.post_counts.arrivals == 10_000 - 2_000
    assert result.counts.arrivals == 10_000
    assert result.stats_start > 0


def test_warmup_horizon_rule_starts_at_fraction_of_horizon():
    config = SimConfig(params=OL, horizon=50.0, warmup=0.3, seed=21)
    result = run(config)
    assert result.stats_start == pytest.approx(15.0)
    assert result.t_end == 50.0
    assert result.time_averages.duration == pytest.approx(35.0, abs=1e-9)


def test_arrival_snapshots_record_pre_arrival_state():
    config = SimConfig(params=SMALL, n_customers=500, warmup=0.0, seed=4,
                       record_events=True, record_arrival_snapshots=True)
    result = run(config)
    times, qs, ss = result.arrival_snapshots
    assert len(times) == 500
    log = result.event_log
    arrivals = log.tags == int(EventTag.ARRIVAL)
    # post-arrival q in the log is exactly one more than the snapshot
    assert np.array_equal(log.q[arrivals], qs + 1)
    assert np.array_equal(log.s[arrivals], ss)


def test_resample_single_event_step_function():
    log = EventLog(q0=0, s0=1, times=np.array([0.5]), tags=np.array([0], dtype=np.int8),
                   q=np.array([1]), s=np.array([1]), t_end=3.2)
    grid, q, s = resample(log, 1.0)
    assert np.allclose(grid, [0.0, 1.0, 2.0, 3.0])
    assert q.tolist() == [0, 1, 1, 1]
    assert s.tolist() == [1, 1, 1, 1]


def test_resample_empty_log_is_constant():
    log = EventLog(q0=3, s0=2, times=np.array([]), tags=np.array([], dtype=np.int8),
                   q=np.array([], dtype=np.int64), s=np.array([], dtype=np.int64), t_end=2.0)
    grid, q, s = resample(log, 0.5)
    assert len(grid) == 5
    assert set(q.tolist()) == {3}
    assert set(s.tolist()) == {2}


def test_resample_rejects_nonpositive_dt():
    log = EventLog(q0=0, s0=1, times=np.array([]), tags=np.array([], dtype=np.int8),
                   q=np.array([], dtype=np.int64), s=np.array([], dtype=np.int64), t_end=1.0)
    with pytest.raises(ValueError):
        resample(log, 0.0)


def test_streaming_trajectory_matches_resampled_log():
    config = SimConfig(params=SMALL, horizon=100.0, warmup=0.0, seed=6,
                       record_events=True, grid_dt=0.7)
    result = run(config)
    grid, q, s = resample(result.event_log, 0.7)
    times, tq, ts = result.trajectory
    n = min(len(grid), len(times))
    assert abs(len(grid) - len(times)) <= 1
    assert np.array_equal(tq[:n], q[:n])
    assert np.array_equal(ts[:n], s[:n])


def test_rolling_moments_match_direct_computation():
    rng = np.random.default_rng(0)
    q = rng.integers(0, 10, size=50)
    s = rng.integers(0, 5, size=50)
    mq, ms, vq, vs, cqs = rolling_moments(q, s, window=8)
    assert len(mq) == 50 - 8 + 1
    for i in (0, 17, 42):
        wq, ws = q[i:i + 8].astype(float), s[i:i + 8].astype(float)
        assert mq[i] == pytest.approx(wq.mean())
        assert vq[i] == pytest.approx(wq.var())
        assert vs[i] == pytest.approx(ws.var())
        assert cqs[i] == pytest.approx(np.cov(wq, ws, bias=True)[0, 1], abs=1e-12)


def test_rolling_variance_converges_to_overload_closure():
    config = SimConfig(params=OL, n_customers=100_000, warmup=0.0, seed=13, grid_dt=0.25)
    result = run(config)
    _, q, _ = result.trajectory
    window = 1600  # 400 time units, long after the transient
    _, _, vq, _, _ = rolling_moments(q, q, window)
    tail_estimate = vq[-1]
    assert tail_estimate == pytest.approx(100.0, rel=0.35)


def test_replicate_single_run_has_no_interval():
    summary = replicate(SimConfig(params=SMALL, n_customers=2_000, seed=1), 1)
    metric = summary.metrics["mean_q"]
    assert metric.std is None and metric.halfwidth is None


def test_replicate_parallel_matches_sequential():
    config = SimConfig(params=SMALL, n_customers=3_000, seed=2)
    sequential = replicate(config, 4, jobs=1)
    parallel = replicate(config, 4, jobs=2)
    assert sequential == parallel


def test_replicate_is_reproducible():
    config = SimConfig(params=SMALL, n_customers=3_000, seed=2)
    assert replicate(config, 3) == replicate(config, 3)


def test_sim_config_validation():
    with pytest.raises(ValueError, match="integer server count"):
        SimConfig(params=validate(1, 1, 1, 0.5, 1, 2.5), n_customers=10)
    with pytest.raises(ValueError, match="stop rule"):
        SimConfig(params=SMALL)
    with pytest.raises(ValueError, match="warmup"):
        SimConfig(params=SMALL, n_customers=10, warmup=0.95)
    with pytest.raises(ValueError, match="grid_dt"):
        SimConfig(params=SMALL, n_customers=10, grid_dt=0.0)


def test_oracle_golden_small_system():
    oracle = stationary_oracle(SMALL, q_max=60)
    assert oracle.tail_mass < 1e-8
    assert 0.0 < oracle.delay_probability < 1.0
    assert oracle.abandonment_fraction == pytest.approx(
        SMALL.theta * oracle.mean_excess / SMALL.lam, rel=1e-12
    )
    summary = replicate(SimConfig(params=SMALL, n_customers=40_000, seed=3), 8)
    for key, exact in (
        ("delay_probability", oracle.delay_probability),
        ("abandonment_fraction", oracle.abandonment_fraction),
    ):
        metric = summary.metrics[key]
        se = metric.std / math.sqrt(summary.n_replications)
        assert abs(metric.mean - exact) <= 3 * se


def erlang_a_distribution(lam, mu, theta, c, q_max):
    """Independent birth-death recursion for the no-charging special case."""
    weights = [1.0]
    for q in range(1, q_max + 1):
        death = mu * min(q, c) + theta * max(q - c, 0)
        weights.append(weights[-1] * lam / death)
    weights = np.array(weights)
    return weights / weights.sum()


def test_oracle_reduces_to_erlang_a_when_p_zero():
    params = validate(3, 1, 0.7, 0.0, 1, 2)
    oracle = stationary_oracle(params, q_max=80)
    marginal = oracle.pi.sum(axis=1)
    reference = erlang_a_distribution(3, 1, 0.7, 2, 80)
    assert np.abs(marginal - reference).max() < 1e-10
    # with p = 0 all servers stay active
    assert oracle.pi[:, :-1].sum() < 1e-12


def test_oracle_concentrates_when_nearly_empty():
    params = validate(0.01, 1, 1, 0.5, 1, 1)
    oracle = stationary_oracle(params, q_max=20)
    assert oracle.pi[0, 1] > 0.95


def test_oracle_rejects_tight_truncation():
    with pytest.raises(TruncationError, match="widen"):
        stationary_oracle(SMALL, q_max=5)


def test_oracle_rejects_huge_state_space():
    with pytest.raises(ValueError, match="state space"):
        stationary_oracle(validate(2, 1, 1, 0.5, 1, 200), q_max=200)
