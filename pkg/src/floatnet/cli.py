"""Command-line front end: ``floatnet run | sweep | dual | check``.

Exit codes: 0 success, 2 invalid input, 3 a lemma check failed.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings

import numpy as np

from .dual import DualConfig, brute_force_dual, solve_dual
from .model import ScenarioError, compute_delta_max, load_scenario
from .pathcheck import (PreconditionError, Trace, check_dynamics, compute_metrics,
                        cumulative_bound_violations, drop_fake_violations, lower_bound_admissions,
                        nondecreasing_segments, transform_segment, verify_trace_lemmas)
from .sim import RunConfig, SweepSpec, run, sweep, sweep_csv

EXIT_OK, EXIT_INVALID, EXIT_LEMMA = 0, 2, 3


def parse_values(text: str) -> list[float]:
    """Comma list; ``a,b,...,c`` expands to the arithmetic progression from a to c with step b - a."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if "..." in parts:
        i = parts.index("...")
        if i < 2 or i != len(parts) - 2:
            raise ValueError("progression must look like a,b,...,c")
        head = [float(p) for p in parts[:i]]
        last = float(parts[-1])
        step = head[-1] - head[-2]
        if step <= 0:
            raise ValueError("progression step must be positive")
        vals = head[:]
        while vals[-1] + step <= last + 1e-9:
            vals.append(vals[-1] + step)
    else:
        vals = [float(p) for p in parts]
    return [int(v) if float(v).is_integer() else v for v in vals]


def _int_list(text: str | None):
    return None if text is None else [int(x) for x in text.split(",")]


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(x) for x in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return _jsonable(obj.item())
    return obj


def _print(record: dict) -> None:
    print(json.dumps({k: _jsonable(v) for k, v in record.items()}, indent=1))


def _gamma(scenario, v, args) -> np.ndarray:
    if getattr(args, "gamma", None):
        return np.array([float(x) for x in args.gamma.split(",")])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return solve_dual(v, scenario).gamma


def cmd_run(args) -> int:
    scenario = load_scenario(args.config)
    gamma = _gamma(scenario, args.v, args) if args.tail else None
    cfg = RunConfig(scenario=scenario, v_param=args.v, buffer_size=args.buffer, horizon=args.horizon,
                    burn_in=args.burn_in, seed=args.seed, mode=args.mode,
                    fake_init=_int_list(args.fake_init), trace_path=args.trace, gamma=gamma,
                    keep_actions=args.mode == "both")
    res = run(cfg)
    record = res.metrics.as_dict()
    if args.mode == "both":
        record["standard_avg_cost"] = res.standard_avg_cost
        record["decisions_identical"] = bool(np.array_equal(res.actions, res.standard_actions))
        record["sum_mismatches"] = res.sum_mismatches
    if args.mode != "standard":
        record["drop_fake_violations"] = res.drop_fake_violations
    _print(record)
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = RunConfig(scenario=args.config, v_param=args.v, buffer_size=args.buffer,
                     horizon=args.horizon, burn_in=args.burn_in, seed=args.seed, mode="floating")
    spec = SweepSpec(base=base, axis=args.axis, values=parse_values(args.values),
                     seeds_per_point=args.seeds)
    df = sweep(spec, out=args.out, workers=args.workers)
    if args.out is None:
        sys.stdout.write(sweep_csv(df))
    return EXIT_OK


def cmd_dual(args) -> int:
    scenario = load_scenario(args.config)
    cfg = DualConfig(max_iters=args.max_iters, tolerance=args.tolerance)
    sol = solve_dual(args.v, scenario, cfg)
    record = {"gamma": sol.gamma, "dual_value": sol.dual_value, "residual": sol.residual,
              "iterations": sol.iterations, "converged": sol.converged}
    if args.oracle:
        ref = brute_force_dual(args.v, scenario, grid_step=args.grid_step)
        record["oracle_gamma"] = ref.gamma
        record["oracle_dual_value"] = ref.dual_value
        record["oracle_max_gap"] = float(np.max(np.abs(ref.gamma - sol.gamma)))
    _print(record)
    return EXIT_OK


def cmd_check(args) -> int:
    scenario = load_scenario(args.config)
    trace = Trace.from_csv(args.trace, args.buffer)
    delta = compute_delta_max(scenario).delta_max
    gamma = _gamma(scenario, args.v, args)
    failures = []

    dyn = check_dynamics(trace, scenario)
    failures += [f"dynamics: {m}" for m in dyn]
    l2 = drop_fake_violations(trace)
    if len(l2) and args.buffer >= 2 * delta:
        t, n = l2[0]
        failures.append(f"drop without fake-backlog increase: {len(l2)} slots, first at {trace.t0 + t}, node {n + 1}")

    lower = lower_bound_admissions(trace, gamma, args.buffer, delta)
    rng = np.random.default_rng(args.seed)
    a = rng.integers(0, trace.length + 1, args.windows)
    b = rng.integers(0, trace.length + 1, args.windows)
    cum = cumulative_bound_violations(trace, lower, np.minimum(a, b), np.maximum(a, b))
    if cum["violations"] or cum["exact_violations"]:
        failures.append(f"cumulative bound: {cum['violations']} general, {cum['exact_violations']} exact violations")

    reports = verify_trace_lemmas(trace, gamma, args.buffer, delta)
    interval_summary = []
    for rep in reports:
        failures += [f"intervals: {m}" for m in rep.violations[:20]]
        interval_summary.append({"node": rep.node, "runs": rep.runs, "intervals": rep.intervals,
                                 "nondecreasing_type": rep.nondecreasing_type,
                                 "decreasing_type": rep.decreasing_type, "capped": rep.capped,
                                 "slack_applied": rep.slack_applied,
                                 "violations": len(rep.violations)})

    seg_total = seg_bad = 0
    for n in range(1, trace.node_count + 1):
        for lo, hi in nondecreasing_segments(trace, n):
            seg_total += 1
            if not transform_segment(trace, n, lo, hi, delta)[1]:
                seg_bad += 1
    if seg_bad:
        failures.append(f"segment transform: {seg_bad} of {seg_total} replays differ")

    burn = min(args.burn_in, trace.length - 1)
    metrics = compute_metrics(trace, burn, args.buffer, gamma=gamma,
                              penalty_per_drop=scenario.penalty_per_drop, scenario=scenario)
    _print({
        "slots": trace.length, "gamma": gamma,
        "dynamics": "pass" if not dyn else "FAIL",
        "drop_fake_growth": "pass" if not len(l2) else ("FAIL" if args.buffer >= 2 * delta else "n/a (B < 2 delta)"),
        "cumulative_bound": {k: v for k, v in cum.items() if k != "where"},
        "intervals": interval_summary,
        "segments": {"checked": seg_total, "mismatched": seg_bad},
        "avg_cost": metrics.avg_cost, "avg_drops": metrics.avg_drops,
        "result": "PASS" if not failures else "FAIL",
    })
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    return EXIT_OK if not failures else EXIT_LEMMA


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="floatnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one configuration and print metrics")
    r.add_argument("--config", required=True, help="scenario JSON file or built-in name")
    r.add_argument("--v", type=float, required=True)
    r.add_argument("--buffer", type=int, required=True)
    r.add_argument("--horizon", type=int, default=1_000_000)
    r.add_argument("--burn-in", type=int, default=None, help="default 10*V")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--mode", choices=["standard", "floating", "both"], default="floating")
    r.add_argument("--fake-init", default=None, help="comma-separated initial fake backlogs")
    r.add_argument("--trace", default=None, help="write the per-slot trace CSV here")
    r.add_argument("--tail", action="store_true", help="solve the dual and report deviation tails")
    r.add_argument("--gamma", default=None, help="comma-separated multipliers instead of solving")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="sweep buffer size or V and write a CSV table")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", choices=["buffer", "buffer_size", "v", "v_param"], required=True)
    s.add_argument("--values", required=True, help="e.g. 8,12,...,40")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--out", default=None)
    s.add_argument("--v", type=float, default=200.0)
    s.add_argument("--buffer", type=int, default=20)
    s.add_argument("--horizon", type=int, default=1_000_000)
    s.add_argument("--burn-in", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    d = sub.add_parser("dual", help="solve the deterministic dual problem")
    d.add_argument("--config", required=True)
    d.add_argument("--v", type=float, required=True)
    d.add_argument("--max-iters", type=int, default=1_000_000)
    d.add_argument("--tolerance", type=float, default=None)
    d.add_argument("--oracle", action="store_true", help="also run the lattice search oracle")
    d.add_argument("--grid-step", type=float, default=0.25)
    d.set_defaults(func=cmd_dual)

    c = sub.add_parser("check", help="verify the sample-path lemmas on a trace CSV")
    c.add_argument("--trace", required=True)
    c.add_argument("--config", required=True)
    c.add_argument("--v", type=float, required=True)
    c.add_argument("--buffer", type=int, required=True)
    c.add_argument("--burn-in", type=int, default=0)
    c.add_argument("--windows", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--gamma", default=None)
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, PreconditionError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
