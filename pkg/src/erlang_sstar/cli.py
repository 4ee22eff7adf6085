"""Command-line front end: analytics, simulation, staffing, sweep tables, validation.

Every subcommand is deterministic given its flags (plus the seed where runs are
stochastic). Outputs are JSON (stable key order, newline-terminated) or CSV;
files are written atomically via a temp file and rename. A JSON config file can
preload any long-option values; explicit flags win on conflict.

Exit codes: 0 success, 1 validation-suite failure, 2 usage or config error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from itertools import product

import numpy as np

from . import __version__
from .diffusion import (
    covariance_sign_thresholds,
    lyapunov_residual,
    solve_lyapunov,
    stationary_moments,
)
from .fluid import FluidState, fixed_point, integrate
from .model import ModelParams, ParamError, RegimeTag, classify, validate
from .probability import Phi_bar, Phi_bar_inv
from .simulator import (
    EVENT_NAMES,
    SimConfig,
    replicate,
    run,
    stationary_oracle,
)
from .staffing import (
    AbandonTarget,
    DelayTarget,
    InfeasibleError,
    staff_abandon_fluid_bound,
    staff_abandon_implicit,
    staff_delay_bivariate,
    staff_delay_deterministic,
    staff_empirical,
)

_OUT_DIR_ENV = "ERLANG_SSTAR_OUT_DIR"


def _json_dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _clean(value):
    """Make a value JSON-safe: NaN/inf to None/strings, numpy scalars to python."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float):
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
    if isinstance(value, RegimeTag):
        return value.value
    return value


def _resolve_out(path: str | None) -> str | None:
    if path is None:
        return None
    base = os.environ.get(_OUT_DIR_ENV)
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _write_text(path: str | None, text: str) -> None:
    path = _resolve_out(path)
    if path is None:
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt_number(value, digits: int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, float) and math.isnan(value):
        return ""
    if digits is not None and isinstance(value, float):
        return f"{value:.{digits}f}"
    return repr(value) if isinstance(value, float) else str(value)


def _csv_text(header: list[str], rows: list[list], digits: int | None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt_number(v, digits) for v in row])
    return buf.getvalue()


def _add_param_args(parser: argparse.ArgumentParser, with_c: bool = True,
                    with_mu: bool = True, as_list: bool = False) -> None:
    kind = _float_list if as_list else float
    parser.add_argument("--lambda", dest="lam", type=kind, required=True, help="arrival rate")
    if with_mu:
        parser.add_argument("--mu", type=kind, required=True, help="service rate")
    parser.add_argument("--theta", type=kind, required=True, help="abandonment rate")
    parser.add_argument("--p", type=kind, required=True, help="charging probability")
    parser.add_argument("--gamma", type=kind, required=True, help="charge-completion rate")
    if with_c:
        parser.add_argument("--c", type=kind, required=True, help="server count")


def _float_list(text: str) -> list[float]:
    values = [float(part) for part in text.split(",") if part.strip() != ""]
    if not values:
        raise argparse.ArgumentTypeError("expected a nonempty comma-separated list")
    return values


def _params_from_args(args) -> ModelParams:
    return validate(args.lam, args.mu, args.theta, args.p, args.gamma, args.c)


def _matrix_json(m) -> list[list[float]]:
    return [[m.a11, m.a12], [m.a21, m.a22]]


def _cmd_fixed_point(args) -> int:
    params = _params_from_args(args)
    fp = fixed_point(params)
    payload = {
        "lam": params.lam, "mu": params.mu, "theta": params.theta,
        "p": params.p, "gamma": params.gamma, "c": params.c,
        "q_star": fp.q_star, "s_star": fp.s_star,
        "regime": fp.regime.tag.value, "load_margin": fp.regime.load_margin,
    }
    _write_text(args.out, _json_dumps(_clean(payload)))
    return 0


def _cmd_moments(args) -> int:
    params = _params_from_args(args)
    ms = stationary_moments(params)
    payload = {
        "regime": ms.regime.tag.value,
        "load_margin": ms.regime.load_margin,
        "v_qq": ms.v_qq, "v_ss": ms.v_ss, "v_qs": ms.v_qs,
        "J": _matrix_json(ms.j),
        "Sigma": _matrix_json(ms.sigma),
        "v_exact": _matrix_json(ms.v_exact),
    }
    _write_text(args.out, _json_dumps(_clean(payload)))
    return 0


def _cmd_cov_window(args) -> int:
    validate(args.lam, 1.0, args.theta, args.p, args.gamma, args.c)
    thresholds = covariance_sign_thresholds(args.lam, args.theta, args.p, args.gamma, args.c)
    payload = {
        "mu_neg": thresholds.mu_neg,
        "mu_ol": thresholds.mu_ol,
        "window_nonempty": thresholds.window_nonempty,
    }
    _write_text(args.out, _json_dumps(_clean(payload)))
    return 0


def _cmd_fluid(args) -> int:
    params = _params_from_args(args)
    init = FluidState(args.q0, args.s0 if args.s0 is not None else params.c)
    trajectory = integrate(params, init, args.horizon, args.step)
    if args.out:
        rows = [[float(t), float(q), float(s)]
                for t, q, s in zip(trajectory.times, trajectory.q, trajectory.s)]
        _write_text(args.out, _csv_text(["t", "q", "s"], rows, args.digits))
    terminal = trajectory.terminal()
    fp = fixed_point(params)
    payload = {
        "terminal_q": terminal.q, "terminal_s": terminal.s,
        "q_star": fp.q_star, "s_star": fp.s_star,
        "regime": fp.regime.tag.value, "horizon": args.horizon,
        "grid_points": int(len(trajectory.times)),
    }
    _write_text(args.summary, _json_dumps(_clean(payload)))
    return 0


def _sim_result_json(result) -> dict:
    return {
        "seed": result.config.seed,
        "replication_index": result.config.replication_index,
        "counts": asdict(result.counts),
        "post_counts": asdict(result.post_counts),
        "time_averages": asdict(result.time_averages),
        "delay_probability": result.delay_probability,
        "abandonment_fraction": result.abandonment_fraction,
        "final_q": result.final_q,
        "final_s": result.final_s,
        "t_end": result.t_end,
        "stats_start": result.stats_start,
    }


def _cmd_simulate(args) -> int:
    params = _params_from_args(args)
    if params.c != int(params.c):
        raise ParamError(f"simulation needs an integer server count, got {params.c!r}")
    config = SimConfig(
        params=params,
        n_customers=args.customers,
        horizon=args.horizon,
        warmup=args.warmup,
        seed=args.seed,
        record_events=args.events is not None,
        grid_dt=args.grid_dt,
    )
    if args.reps > 1:
        summary = replicate(config, args.reps, jobs=args.jobs)
        payload = {
            "seed": summary.seed,
            "n_replications": summary.n_replications,
            "metrics": {k: asdict(v) for k, v in summary.metrics.items()},
        }
        _write_text(args.out, _json_dumps(_clean(payload)))
        return 0
    result = run(config)
    if args.events is not None and result.event_log is not None:
        log = result.event_log
        rows = [[float(t), EVENT_NAMES[int(tag)], int(q), int(s)]
                for t, tag, q, s in zip(log.times, log.tags, log.q, log.s)]
        _write_text(args.events, _csv_text(["t", "event", "q", "s"], rows, args.digits))
    if args.trajectory is not None and result.trajectory is not None:
        times, qs, ss = result.trajectory
        rows = [[float(t), int(q), int(s)] for t, q, s in zip(times, qs, ss)]
        _write_text(args.trajectory, _csv_text(["t", "q", "s"], rows, args.digits))
    _write_text(args.out, _json_dumps(_clean(_sim_result_json(result))))
    return 0


def _answer_json(answer) -> dict:
    return {
        "c_real": answer.c_real,
        "c_int": answer.c_int,
        "method": answer.method.value,
        "regime_assumed": answer.regime_assumed.value,
        "diagnostics": answer.diagnostics,
    }


def _cmd_staff(args) -> int:
    regime = None
    if args.regime == "ul":
        regime = RegimeTag.UNDERLOADED
    elif args.regime == "ol":
        regime = RegimeTag.OVERLOADED
    if args.metric == "delay":
        target = DelayTarget(args.epsilon)
        if args.method == "fluid":
            answer = staff_delay_deterministic(args.lam, args.mu, args.theta, args.p, args.gamma, target, regime)
        elif args.method == "bivariate":
            answer = staff_delay_bivariate(args.lam, args.mu, args.theta, args.p, args.gamma, target, regime)
        elif args.method == "empirical":
            answer = staff_empirical(
                args.lam, args.mu, args.theta, args.p, args.gamma, "delay", args.epsilon,
                customers=args.customers, reps=args.reps, seed=args.seed, jobs=args.jobs,
            )
        else:
            raise ParamError(f"method {args.method!r} does not apply to delay targets")
    else:
        target = AbandonTarget(args.epsilon)
        if args.method == "fluid-bound":
            answer = staff_abandon_fluid_bound(args.lam, args.mu, args.theta, args.p, args.gamma, target)
        elif args.method == "implicit":
            answer = staff_abandon_implicit(args.lam, args.mu, args.theta, args.p, args.gamma, target)
        elif args.method == "empirical":
            answer = staff_empirical(
                args.lam, args.mu, args.theta, args.p, args.gamma, "abandonment", args.epsilon,
                customers=args.customers, reps=args.reps, seed=args.seed, jobs=args.jobs,
            )
        else:
            raise ParamError(f"method {args.method!r} does not apply to abandonment targets")
    _write_text(args.out, _json_dumps(_clean(_answer_json(answer))))
    return 0


def _table_row(task) -> list:
    kind, lam, mu, theta, p, gamma, eps, with_sim, customers, reps, seed = task
    c_sim = None
    if kind == "delay":
        try:
            c_fluid = staff_delay_deterministic(lam, mu, theta, p, gamma, DelayTarget(eps)).c_real
        except InfeasibleError as exc:
            c_fluid = None
        try:
            c_diff = staff_delay_bivariate(lam, mu, theta, p, gamma, DelayTarget(eps)).c_real
        except InfeasibleError:
            c_diff = None
        if with_sim:
            c_sim = staff_empirical(lam, mu, theta, p, gamma, "delay", eps,
                                    customers=customers, reps=reps, seed=seed).c_int
    else:
        try:
            c_fluid = staff_abandon_fluid_bound(lam, mu, theta, p, gamma, AbandonTarget(eps)).c_real
        except InfeasibleError:
            c_fluid = None
        try:
            c_diff = staff_abandon_implicit(lam, mu, theta, p, gamma, AbandonTarget(eps)).c_real
        except InfeasibleError:
            c_diff = None
        if with_sim:
            c_sim = staff_empirical(lam, mu, theta, p, gamma, "abandonment", eps,
                                    customers=customers, reps=reps, seed=seed).c_int
    pct_fluid = 100.0 * c_fluid / c_sim if (c_sim and c_fluid is not None) else None
    pct_diff = 100.0 * c_diff / c_sim if (c_sim and c_diff is not None) else None
    return [lam, mu, theta, p, gamma, eps, c_sim, c_fluid, pct_fluid, c_diff, pct_diff]


def _cmd_table(args) -> int:
    grids = [args.lam, args.mu, args.theta, args.p, args.gamma, args.epsilon]
    if any(len(g) == 0 for g in grids):
        raise ParamError("sweep grids must be nonempty")
    combos = list(product(*grids))
    print(f"sweep size: {len(combos)} configurations", file=sys.stderr)
    if len(combos) > args.max_rows:
        raise ParamError(
            f"sweep has {len(combos)} rows, above the cap {args.max_rows}; "
            "raise --max-rows to confirm"
        )
    for lam, mu, theta, p, gamma, eps in combos:
        validate(lam, mu, theta, p, gamma, 1.0)
        if not 0.0 < eps < 1.0:
            raise ParamError(f"epsilon must lie in (0, 1), got {eps!r}")

    tasks = [
        (args.kind, lam, mu, theta, p, gamma, eps,
         args.with_sim, args.customers, args.reps, args.seed)
        for lam, mu, theta, p, gamma, eps in combos
    ]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_table_row, tasks))
    else:
        rows = [_table_row(task) for task in tasks]

    header = ["lambda", "mu", "theta", "p", "gamma", "epsilon",
              "c_sim", "c_fluid", "pct_fluid", "c_diff", "pct_diff"]
    _write_text(args.out, _csv_text(header, rows, args.digits))
    return 0


def _validate_checks(args) -> list[dict]:
    checks: list[dict] = []
    rng = np.random.default_rng(args.seed)

    def record(name: str, passed: bool, detail: str) -> None:
        checks.append({"check": name, "status": "pass" if passed else "fail", "detail": detail})

    # probability kernel round trip
    worst = 0.0
    for eps in (1e-4, 0.01, 0.05, 0.1, 0.5, 0.9):
        worst = max(worst, abs(Phi_bar(Phi_bar_inv(eps)) - eps))
    record("quantile_round_trip", worst < 1e-9, f"max |Phi_bar(Phi_bar_inv(eps)) - eps| = {worst:.3e}")

    # closed forms vs the generic Lyapunov solve, both regimes
    worst_rel = 0.0
    for _ in range(args.draws):
        lam = rng.uniform(5.0, 200.0)
        mu = rng.uniform(0.3, 3.0)
        theta = rng.uniform(0.3, 3.0)
        p = rng.uniform(0.0, 1.0)
        gamma = rng.uniform(0.3, 3.0)
        load = lam / mu + lam * p / gamma
        for c in (load * 1.4, load * 0.6):
            params = validate(lam, mu, theta, p, gamma, c)
            ms = stationary_moments(params)
            residual = lyapunov_residual(ms.j, ms.v_exact, ms.sigma)
            worst_rel = max(worst_rel, residual / ms.sigma.max_abs())
    record("lyapunov_vs_closed_form", worst_rel < 1e-10,
           f"max residual / |Sigma| = {worst_rel:.3e} over {2 * args.draws} draws")

    # small-chain oracle vs simulation
    params = validate(2.0, 1.0, 1.0, 0.5, 1.0, 2.0)
    oracle = stationary_oracle(params, q_max=60)
    config = SimConfig(params=params, n_customers=args.oracle_customers, seed=args.seed)
    summary = replicate(config, 16, jobs=args.jobs)
    ok = True
    details = []
    for key, exact in (
        ("delay_probability", oracle.delay_probability),
        ("abandonment_fraction", oracle.abandonment_fraction),
    ):
        metric = summary.metrics[key]
        se = metric.std / math.sqrt(summary.n_replications)
        gap = abs(metric.mean - exact)
        details.append(f"{key}: |{metric.mean:.5f} - {exact:.5f}| = {gap:.5f} vs 3*SE = {3 * se:.5f}")
        ok = ok and gap <= 3.0 * se
    record("simulator_vs_oracle", ok, "; ".join(details))

    # conservation on one replication
    result = run(SimConfig(params=params, n_customers=20_000, seed=args.seed))
    counts = result.counts
    balance = counts.arrivals - counts.completions - counts.abandonments - (result.final_q - config.initial_q)
    servers = counts.charge_departures - counts.charge_returns - ((params.c - result.final_s) - 0)
    record("conservation", balance == 0 and servers == 0,
           f"count defect = {balance}, charging defect = {servers}")
    return checks


def _cmd_validate(args) -> int:
    checks = _validate_checks(args)
    failed = [c for c in checks if c["status"] == "fail"]
    payload = {"checks": checks, "failures": len(failed)}
    _write_text(args.out, _json_dumps(_clean(payload)))
    return 1 if failed else 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="erlang-sstar",
        description="Multi-server queues with abandonment and stochastic server charging",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="JSON file preloading long-option values (flags win)")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("fixed-point", help="closed-form fluid steady state")
    _add_param_args(sp)
    sp.add_argument("--out", help="write JSON here instead of stdout")
    sp.set_defaults(func=_cmd_fixed_point)

    sp = sub.add_parser("moments", help="stationary second moments and matrices")
    _add_param_args(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_moments)

    sp = sub.add_parser("cov-window", help="service-rate window for negative covariance in overload")
    _add_param_args(sp, with_c=False, with_mu=False)
    sp.add_argument("--c", type=float, required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_cov_window)

    sp = sub.add_parser("fluid", help="integrate the mean dynamics and export the trajectory")
    _add_param_args(sp)
    sp.add_argument("--q0", type=float, default=0.0)
    sp.add_argument("--s0", type=float, default=None)
    sp.add_argument("--horizon", type=float, required=True)
    sp.add_argument("--step", type=float, default=None)
    sp.add_argument("--out", help="trajectory CSV (t,q,s)")
    sp.add_argument("--summary", help="terminal-state JSON (default stdout)")
    sp.add_argument("--digits", type=int, default=None)
    sp.set_defaults(func=_cmd_fluid)

    sp = sub.add_parser("simulate", help="event-driven simulation")
    _add_param_args(sp)
    sp.add_argument("--customers", type=int, default=None)
    sp.add_argument("--horizon", type=float, default=None)
    sp.add_argument("--warmup", type=float, default=0.2)
    sp.add_argument("--reps", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--grid-dt", type=float, default=None)
    sp.add_argument("--out", help="summary JSON")
    sp.add_argument("--trajectory", help="resampled trajectory CSV (needs --grid-dt)")
    sp.add_argument("--events", help="event-log CSV")
    sp.add_argument("--digits", type=int, default=None)
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("staff", help="staffing recommendation for a target")
    _add_param_args(sp, with_c=False)
    sp.add_argument("--metric", choices=["delay", "abandon"], required=True)
    sp.add_argument("--method", choices=["fluid", "bivariate", "fluid-bound", "implicit", "empirical"],
                    required=True)
    sp.add_argument("--epsilon", type=float, required=True)
    sp.add_argument("--regime", choices=["auto", "ul", "ol"], default="auto")
    sp.add_argument("--customers", type=int, default=100_000)
    sp.add_argument("--reps", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_staff)

    sp = sub.add_parser("table", help="staffing comparison table over a parameter grid")
    _add_param_args(sp, with_c=False, as_list=True)
    sp.add_argument("--kind", choices=["delay", "abandon"], required=True)
    sp.add_argument("--epsilon", type=_float_list, required=True)
    sp.add_argument("--with-sim", action="store_true", help="also search empirical minimal staffing")
    sp.add_argument("--customers", type=int, default=100_000)
    sp.add_argument("--reps", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--max-rows", type=int, default=10_000)
    sp.add_argument("--digits", type=int, default=None)
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_table)

    sp = sub.add_parser("validate", help="cross-check suite: oracle, Lyapunov, kernel, conservation")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--draws", type=int, default=100)
    sp.add_argument("--oracle-customers", type=int, default=40_000)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_validate)
    return parser


def _iter_all_actions(parser: argparse.ArgumentParser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub_parser in action.choices.values():
                yield from _iter_all_actions(sub_parser)
        else:
            yield action


def _extract_config_path(argv: list[str]) -> str | None:
    for i, arg in enumerate(argv):
        if arg == "--config":
            return argv[i + 1] if i + 1 < len(argv) else None
        if arg.startswith("--config="):
            return arg.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, path: str) -> int:
    """Preload option values from a JSON object; returns an exit code on failure."""
    try:
        with open(path) as handle:
            values = json.load(handle)
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 3
    except json.JSONDecodeError as exc:
        print(f"config is not valid JSON: {exc}", file=sys.stderr)
        return 2
    if not isinstance(values, dict):
        print("config must be a JSON object of option values", file=sys.stderr)
        return 2
    normalized = {str(k).replace("-", "_"): v for k, v in values.items()}
    if "lambda" in normalized:
        normalized["lam"] = normalized.pop("lambda")
    for action in _iter_all_actions(parser):
        if action.dest in normalized:
            action.default = normalized[action.dest]
            action.required = False
    return 0


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = _build_parser()
    config_path = _extract_config_path(argv)
    if config_path:
        code = _apply_config(parser, config_path)
        if code:
            return code
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        return args.func(args)
    except (ParamError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
