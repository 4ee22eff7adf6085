"""Exact event-driven simulation of the charging-queue CTMC.

All clocks are exponential, so the direct method is exact: one exponential
holding time at the total rate, then a categorical draw over the four primitive
events (arrival, service completion, abandonment, charge return). A service
completion sends the server to charge on a single Bernoulli(p) draw.

Replication streams come from numpy's PCG64 keyed by (seed, replication_index)
through SeedSequence, so runs are reproducible and streams are independent.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from .model import ModelParams

_BUF = 1 << 16


class EventTag(IntEnum):
    ARRIVAL = 0
    SERVICE = 1
    ABANDON = 2
    RETURN = 3


EVENT_NAMES = ("arrival", "service", "abandon", "return")


class UniformStream:
    """Buffered uniform(0,1) draws from a PCG64 generator."""

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._buf = rng.random(_BUF)
        self._i = 0

    def next(self) -> float:
        if self._i >= len(self._buf):
            self._buf = self._rng.random(_BUF)
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return u


def derive_rng(seed: int, replication_index: int) -> np.random.Generator:
    """The stream contract: PCG64 keyed by (seed, replication_index)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, replication_index))))


@dataclass(frozen=True)
class SimState:
    q: int
    s: int
    clock: float


@dataclass(frozen=True)
class SimConfig:
    """One replication's full description.

    Stop on the n-th arrival (n_customers), at a fixed horizon, or whichever
    comes first when both are set. The warmup fraction of customers (count
    rule) or time (horizon rule) is discarded from steady-state statistics.
    """

    params: ModelParams
    n_customers: int | None = None
    horizon: float | None = None
    warmup: float = 0.2
    seed: int = 0
    replication_index: int = 0
    record_events: bool = False
    record_arrival_snapshots: bool = False
    grid_dt: float | None = None
    initial_q: int = 0
    initial_s: int | None = None

    def __post_init__(self):
        c = self.params.c
        if c != int(c) or c < 1:
            raise ValueError(f"simulation needs an integer server count >= 1, got {c!r}")
        if self.n_customers is None and self.horizon is None:
            raise ValueError("need a stop rule: n_customers and/or horizon")
        if self.n_customers is not None and self.n_customers < 1:
            raise ValueError(f"n_customers must be >= 1, got {self.n_customers!r}")
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon!r}")
        if not 0.0 <= self.warmup <= 0.9:
            raise ValueError(f"warmup must lie in [0, 0.9], got {self.warmup!r}")
        if self.seed < 0 or self.replication_index < 0:
            raise ValueError("seed and replication_index must be nonnegative")
        if self.grid_dt is not None and not self.grid_dt > 0:
            raise ValueError(f"grid_dt must be > 0, got {self.grid_dt!r}")
        if self.initial_q < 0:
            raise ValueError("initial_q must be >= 0")
        if self.initial_s is not None and not 0 <= self.initial_s <= int(c):
            raise ValueError("initial_s must lie in [0, c]")


@dataclass(frozen=True)
class SimCounts:
    arrivals: int
    completions: int
    abandonments: int
    charge_departures: int
    charge_returns: int
    delayed_arrivals: int


@dataclass(frozen=True)
class TimeAverages:
    """Time-weighted statistics over the post-warmup window."""

    duration: float
    mean_q: float
    mean_s: float
    mean_excess: float
    mean_idle: float
    var_q: float
    var_s: float
    cov_qs: float
    var_excess: float
    var_idle: float


@dataclass(frozen=True)
class EventLog:
    q0: int
    s0: int
    times: np.ndarray
    tags: np.ndarray
    q: np.ndarray
    s: np.ndarray
    t_end: float


@dataclass(frozen=True)
class SimResult:
    config: SimConfig
    counts: SimCounts
    post_counts: SimCounts
    time_averages: TimeAverages
    delay_probability: float
    abandonment_fraction: float
    final_q: int
    final_s: int
    t_end: float
    stats_start: float
    event_log: EventLog | None = None
    arrival_snapshots: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    trajectory: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None


def step(state: SimState, params: ModelParams, stream: UniformStream) -> tuple[SimState, EventTag, float]:
    """One transition: exponential holding at the total rate, then the event.

    Draw order (holding, selection, charge mark on completions) matches run(),
    so driving this repeatedly on a fresh stream replays a run's event sequence.
    """
    q, s = state.q, state.s
    c = int(params.c)
    r_svc = params.mu * (q if q < s else s)
    r_ab = params.theta * (q - s if q > s else 0)
    r_ret = params.gamma * (c - s)
    total = params.lam + r_svc + r_ab + r_ret
    holding = -math.log(1.0 - stream.next()) / total
    x = stream.next() * total
    if x < params.lam:
        return SimState(q + 1, s, state.clock + holding), EventTag.ARRIVAL, holding
    if x < params.lam + r_svc:
        charged = stream.next() < params.p
        return (
            SimState(q - 1, s - 1 if charged else s, state.clock + holding),
            EventTag.SERVICE,
            holding,
        )
    if x < params.lam + r_svc + r_ab:
        return SimState(q - 1, s, state.clock + holding), EventTag.ABANDON, holding
    return SimState(q, s + 1, state.clock + holding), EventTag.RETURN, holding


def run(config: SimConfig) -> SimResult:
    """Simulate one replication; deterministic in (seed, replication_index)."""
    p = config.params
    lam, mu, theta, pp, gamma = p.lam, p.mu, p.theta, p.p, p.gamma
    c = int(p.c)
    rng = derive_rng(config.seed, config.replication_index)
    ubuf = rng.random(_BUF)
    ui = 0

    q = config.initial_q
    s = c if config.initial_s is None else config.initial_s
    q0, s0 = q, s
    t = 0.0

    n_stop = config.n_customers
    t_stop = config.horizon

    if n_stop is not None:
        warmup_arrivals = int(config.warmup * n_stop)
        stats_on = warmup_arrivals == 0
        t_start = 0.0 if stats_on else math.inf
    else:
        warmup_arrivals = -1
        t_start = config.warmup * t_stop
        stats_on = True

    arrivals = completions = abandonments = charge_departures = charge_returns = delayed = 0
    p_arrivals = p_completions = p_abandonments = p_departures = p_returns = p_delayed = 0
    acc_t = acc_q = acc_s = acc_q2 = acc_s2 = acc_qs = 0.0
    acc_e = acc_e2 = acc_i = acc_i2 = 0.0

    record = config.record_events
    log_t: list[float] = []
    log_tag: list[int] = []
    log_q: list[int] = []
    log_s: list[int] = []
    snaps = config.record_arrival_snapshots
    snap_t: list[float] = []
    snap_q: list[int] = []
    snap_s: list[int] = []
    dt_grid = config.grid_dt
    grid_q: list[int] = []
    grid_s: list[int] = []
    next_grid = 0.0

    while True:
        busy = q if q < s else s
        waiting = q - s
        if waiting < 0:
            waiting = 0
        r_svc = mu * busy
        r_ab = theta * waiting
        r_ret = gamma * (c - s)
        total = lam + r_svc + r_ab + r_ret

        # draws consume the stream one value at a time, exactly like step()
        if ui == _BUF:
            ubuf = rng.random(_BUF)
            ui = 0
        hold = -math.log(1.0 - ubuf[ui]) / total
        ui += 1
        t_next = t + hold

        if t_stop is not None and t_next >= t_stop:
            t_next = t_stop
            if stats_on and t_next > t_start:
                w = t_next - (t if t > t_start else t_start)
                e = q - s if q > s else 0
                i = s - q if s > q else 0
                acc_t += w
                acc_q += q * w
                acc_s += s * w
                acc_q2 += q * q * w
                acc_s2 += s * s * w
                acc_qs += q * s * w
                acc_e += e * w
                acc_e2 += e * e * w
                acc_i += i * w
                acc_i2 += i * i * w
            if dt_grid is not None:
                while next_grid <= t_next:
                    grid_q.append(q)
                    grid_s.append(s)
                    next_grid += dt_grid
            t = t_next
            break

        if stats_on and t_next > t_start:
            w = t_next - (t if t > t_start else t_start)
            e = q - s if q > s else 0
            i = s - q if s > q else 0
            acc_t += w
            acc_q += q * w
            acc_s += s * w
            acc_q2 += q * q * w
            acc_s2 += s * s * w
            acc_qs += q * s * w
            acc_e += e * w
            acc_e2 += e * e * w
            acc_i += i * w
            acc_i2 += i * i * w
        if dt_grid is not None:
            while next_grid < t_next:
                grid_q.append(q)
                grid_s.append(s)
                next_grid += dt_grid
        t = t_next

        if ui == _BUF:
            ubuf = rng.random(_BUF)
            ui = 0
        x = ubuf[ui] * total
        ui += 1
        counted = stats_on and t >= t_start
        if x < lam:
            arrivals += 1
            was_delayed = q >= s
            if was_delayed:
                delayed += 1
            if counted:
                p_arrivals += 1
                if was_delayed:
                    p_delayed += 1
            if snaps:
                snap_t.append(t)
                snap_q.append(q)
                snap_s.append(s)
            q += 1
            tag = 0
            if record:
                log_t.append(t)
                log_tag.append(tag)
                log_q.append(q)
                log_s.append(s)
            if arrivals == warmup_arrivals and not stats_on:
                stats_on = True
                t_start = t
            if n_stop is not None and arrivals >= n_stop:
                break
            continue
        if x < lam + r_svc:
            completions += 1
            q -= 1
            if ui == _BUF:
                ubuf = rng.random(_BUF)
                ui = 0
            if ubuf[ui] < pp:
                s -= 1
                charge_departures += 1
                if counted:
                    p_departures += 1
            ui += 1
            if counted:
                p_completions += 1
            tag = 1
        elif x < lam + r_svc + r_ab:
            abandonments += 1
            q -= 1
            if counted:
                p_abandonments += 1
            tag = 2
        else:
            charge_returns += 1
            s += 1
            if counted:
                p_returns += 1
            tag = 3
        if record:
            log_t.append(t)
            log_tag.append(tag)
            log_q.append(q)
            log_s.append(s)

    if acc_t > 0:
        mean_q = acc_q / acc_t
        mean_s = acc_s / acc_t
        mean_e = acc_e / acc_t
        mean_i = acc_i / acc_t
        averages = TimeAverages(
            duration=acc_t,
            mean_q=mean_q,
            mean_s=mean_s,
            mean_excess=mean_e,
            mean_idle=mean_i,
            var_q=max(acc_q2 / acc_t - mean_q * mean_q, 0.0),
            var_s=max(acc_s2 / acc_t - mean_s * mean_s, 0.0),
            cov_qs=acc_qs / acc_t - mean_q * mean_s,
            var_excess=max(acc_e2 / acc_t - mean_e * mean_e, 0.0),
            var_idle=max(acc_i2 / acc_t - mean_i * mean_i, 0.0),
        )
    else:
        nan = math.nan
        averages = TimeAverages(0.0, nan, nan, nan, nan, nan, nan, nan, nan, nan)

    event_log = None
    if record:
        event_log = EventLog(
            q0=q0,
            s0=s0,
            times=np.array(log_t),
            tags=np.array(log_tag, dtype=np.int8),
            q=np.array(log_q, dtype=np.int64),
            s=np.array(log_s, dtype=np.int64),
            t_end=t,
        )
    snapshots = None
    if snaps:
        snapshots = (
            np.array(snap_t),
            np.array(snap_q, dtype=np.int64),
            np.array(snap_s, dtype=np.int64),
        )
    trajectory = None
    if dt_grid is not None:
        n_grid = len(grid_q)
        trajectory = (
            np.arange(n_grid) * dt_grid,
            np.array(grid_q, dtype=np.int64),
            np.array(grid_s, dtype=np.int64),
        )

    return SimResult(
        config=config,
        counts=SimCounts(arrivals, completions, abandonments, charge_departures, charge_returns, delayed),
        post_counts=SimCounts(p_arrivals, p_completions, p_abandonments, p_departures, p_returns, p_delayed),
        time_averages=averages,
        delay_probability=p_delayed / p_arrivals if p_arrivals else math.nan,
        abandonment_fraction=p_abandonments / p_arrivals if p_arrivals else math.nan,
        final_q=q,
        final_s=s,
        t_end=t,
        stats_start=t_start if acc_t > 0 else math.nan,
        event_log=event_log,
        arrival_snapshots=snapshots,
        trajectory=trajectory,
    )


def resample(log: EventLog, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample the right-continuous step path at t = 0, dt, 2*dt, ... <= t_end."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt!r}")
    n = int(math.floor(log.t_end / dt)) + 1
    grid = np.arange(n) * dt
    if len(log.times) == 0:
        return grid, np.full(n, log.q0, dtype=np.int64), np.full(n, log.s0, dtype=np.int64)
    k = np.searchsorted(log.times, grid, side="right")
    q = np.where(k > 0, log.q[np.maximum(k - 1, 0)], log.q0)
    s = np.where(k > 0, log.s[np.maximum(k - 1, 0)], log.s0)
    return grid, q, s


def rolling_moments(
    q: np.ndarray, s: np.ndarray, window: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Sliding-window mean/variance/covariance over uniformly sampled series.

    Returns (mean_q, mean_s, var_q, var_s, cov_qs), each of length
    len(q) - window + 1, with population (ddof=0) normalization.
    """
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window!r}")
    if len(q) != len(s) or len(q) < window:
        raise ValueError("series must have equal length >= window")
    qf = np.asarray(q, dtype=float)
    sf = np.asarray(s, dtype=float)

    def windowed_sum(x):
        cs = np.concatenate(([0.0], np.cumsum(x)))
        return cs[window:] - cs[:-window]

    mq = windowed_sum(qf) / window
    ms = windowed_sum(sf) / window
    vq = np.maximum(windowed_sum(qf * qf) / window - mq * mq, 0.0)
    vs = np.maximum(windowed_sum(sf * sf) / window - ms * ms, 0.0)
    cqs = windowed_sum(qf * sf) / window - mq * ms
    return mq, ms, vq, vs, cqs


_METRIC_KEYS = (
    "mean_q",
    "mean_s",
    "var_q",
    "var_s",
    "cov_qs",
    "mean_excess",
    "mean_idle",
    "var_excess",
    "var_idle",
    "delay_probability",
    "abandonment_fraction",
)


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float | None
    halfwidth: float | None


@dataclass(frozen=True)
class ReplicationSummary:
    """Across-replication mean, sample std, and normal-theory 95% half-width."""

    n_replications: int
    seed: int
    metrics: dict[str, MetricSummary]


def _metric_values(result: SimResult) -> dict[str, float]:
    ta = result.time_averages
    return {
        "mean_q": ta.mean_q,
        "mean_s": ta.mean_s,
        "var_q": ta.var_q,
        "var_s": ta.var_s,
        "cov_qs": ta.cov_qs,
        "mean_excess": ta.mean_excess,
        "mean_idle": ta.mean_idle,
        "var_excess": ta.var_excess,
        "var_idle": ta.var_idle,
        "delay_probability": result.delay_probability,
        "abandonment_fraction": result.abandonment_fraction,
    }


def replicate(config: SimConfig, n_replications: int, jobs: int = 1) -> ReplicationSummary:
    """Independent replications 0..R-1 of config, aggregated order-independently."""
    if n_replications < 1:
        raise ValueError(f"n_replications must be >= 1, got {n_replications!r}")
    configs = [replace(config, replication_index=i) for i in range(n_replications)]
    if jobs > 1 and n_replications > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, configs))
    else:
        results = [run(cfg) for cfg in configs]

    metrics: dict[str, MetricSummary] = {}
    for key in _METRIC_KEYS:
        values = np.array([_metric_values(r)[key] for r in results])
        mean = float(values.mean())
        if n_replications >= 2:
            std = float(values.std(ddof=1))
            metrics[key] = MetricSummary(mean, std, 1.96 * std / math.sqrt(n_replications))
        else:
            metrics[key] = MetricSummary(mean, None, None)
    return ReplicationSummary(n_replications, config.seed, metrics)


class TruncationError(RuntimeError):
    """The queue truncation holds visible probability mass; widen q_max."""


@dataclass(frozen=True)
class OracleResult:
    """Stationary distribution of the truncated generator and derived metrics."""

    delay_probability: float
    mean_excess: float
    mean_idle: float
    abandonment_fraction: float
    mean_q: float
    mean_s: float
    var_q: float
    var_s: float
    cov_qs: float
    var_excess: float
    var_idle: float
    tail_mass: float
    pi: np.ndarray


def stationary_oracle(params: ModelParams, q_max: int, tail_tol: float = 1e-8) -> OracleResult:
    """Exact stationary metrics from a dense solve of the truncated generator.

    States are (q, s) with q <= q_max and s in 0..c; arrivals at q = q_max are
    dropped, and the boundary-layer mass must stay below tail_tol.
    """
    c = int(params.c)
    if params.c != c or c < 1:
        raise ValueError(f"oracle needs an integer server count >= 1, got {params.c!r}")
    nq, ns = q_max + 1, c + 1
    n = nq * ns
    if n > 20000:
        raise ValueError(f"state space too large for a dense solve: {n} states")
    lam, mu, theta, p, gamma = params.lam, params.mu, params.theta, params.p, params.gamma

    gen = np.zeros((n, n))

    def idx(q, s):
        return q * ns + s

    for q in range(nq):
        for s in range(ns):
            i = idx(q, s)
            busy = min(q, s)
            waiting = max(q - s, 0)
            if q < q_max:
                gen[i, idx(q + 1, s)] += lam
            if busy > 0:
                gen[i, idx(q - 1, s)] += (1.0 - p) * mu * busy
                gen[i, idx(q - 1, s - 1)] += p * mu * busy
            if waiting > 0:
                gen[i, idx(q - 1, s)] += theta * waiting
            if s < c:
                gen[i, idx(q, s + 1)] += gamma * (c - s)
    gen[np.arange(n), np.arange(n)] = -gen.sum(axis=1)

    a = gen.T.copy()
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(a, b)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    pi = pi.reshape(nq, ns)

    tail_mass = float(pi[q_max, :].sum())
    if tail_mass >= tail_tol:
        raise TruncationError(
            f"tail mass {tail_mass:.3e} at q_max={q_max} exceeds {tail_tol:.1e}; widen q_max"
        )

    qs = np.arange(nq, dtype=float)[:, None]
    ss = np.arange(ns, dtype=float)[None, :]
    excess = np.maximum(qs - ss, 0.0)
    idle = np.maximum(ss - qs, 0.0)
    mean_q = float((pi * qs).sum())
    mean_s = float((pi * ss).sum())
    mean_e = float((pi * excess).sum())
    mean_i = float((pi * idle).sum())
    return OracleResult(
        delay_probability=float((pi * (qs >= ss)).sum()),
        mean_excess=mean_e,
        mean_idle=mean_i,
        abandonment_fraction=theta * mean_e / lam,
        mean_q=mean_q,
        mean_s=mean_s,
        var_q=float((pi * qs**2).sum()) - mean_q**2,
        var_s=float((pi * ss**2).sum()) - mean_s**2,
        cov_qs=float((pi * qs * ss).sum()) - mean_q * mean_s,
        var_excess=float((pi * excess**2).sum()) - mean_e**2,
        var_idle=float((pi * idle**2).sum()) - mean_i**2,
        tail_mass=tail_mass,
        pi=pi,
    )
