"""Acceptance criteria 1-10 at their stated tolerances.

Each test records one PASS/FAIL line, printed in the terminal summary.
Run directly with ``python tests/test_acceptance.py``.
"""

import sys
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, single_state
from floatnet import build_line_network, load_scenario, random_scenario
from floatnet.dual import brute_force_dual, dual_subgradient, dual_values, solve_dual
from floatnet.model import check_slater, compute_delta_max
from floatnet.pathcheck import (check_dynamics, cumulative_bound_violations, drop_fake_violations,
                                lower_bound_admissions, nondecreasing_segments, transform_segment,
                                verify_trace_lemmas)
from floatnet.queues import FloatingQueueState, standard_update, step_floating_node
from floatnet.sim import RunConfig, run

pytestmark = pytest.mark.slow

V = 200.0
BUFFERS = (8, 16, 24, 32, 40)
SEEDS = (0, 1, 2, 3, 4)
HORIZON = 1_000_000
BURN_IN = 2000
WINDOWS_PER_TRACE = 100
SEGMENTS_PER_TRACE = 20
N_RANDOM_TRACES = 50


def record(n, ok, detail):
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    return ok


@dataclass
class TraceSummary:
    label: str
    buffer_size: int
    slots: int
    dynamics: list
    drop_fake_engine: int
    drop_fake_trace: int
    drop_slots: int
    windows: int
    window_violations: int
    exact_checked: int
    exact_violations: int
    interval_reports: list
    segments_checked: int = 0
    segments_with_fake_service: int = 0
    segment_mismatches: list = field(default_factory=list)


def _check_trace(label, res, scenario, gamma, B, delta, rng):
    """Run every trace-level oracle on one recorded run, then drop the trace."""
    tr = res.trace
    low = lower_bound_admissions(tr, gamma, B, delta)
    a = rng.integers(0, tr.length + 1, WINDOWS_PER_TRACE)
    b = rng.integers(0, tr.length + 1, WINDOWS_PER_TRACE)
    cum = cumulative_bound_violations(tr, low, np.minimum(a, b), np.maximum(a, b))
    reps = verify_trace_lemmas(tr, gamma, B, delta)
    s = TraceSummary(label=label, buffer_size=B, slots=tr.length,
                     dynamics=check_dynamics(tr, scenario),
                     drop_fake_engine=res.drop_fake_violations,
                     drop_fake_trace=len(drop_fake_violations(tr)),
                     drop_slots=int((tr.drops > 0).sum()),
                     windows=cum["windows"], window_violations=cum["violations"],
                     exact_checked=cum["exact_checked"], exact_violations=cum["exact_violations"],
                     interval_reports=reps)
    segs = [(n, lo, hi) for n in range(1, tr.node_count + 1) for lo, hi in nondecreasing_segments(tr, n)]
    pick = rng.permutation(len(segs))[:SEGMENTS_PER_TRACE]
    for i in pick:
        n, lo, hi = segs[i]
        _, ok = transform_segment(tr, n, lo, hi, delta)
        s.segments_checked += 1
        s.segments_with_fake_service += int(tr.b_f[lo:hi, n - 1].any())
        if not ok:
            s.segment_mismatches.append((label, n, lo, hi))
    return s


@pytest.fixture(scope="session")
def power_sweep():
    scenario = load_scenario("line_power")
    gamma = solve_dual(V, scenario).gamma
    rng = np.random.default_rng(2024)
    rows, traces = [], []
    t0 = time.perf_counter()
    for B in BUFFERS:
        for seed in SEEDS:
            start = time.perf_counter()
            res = run(RunConfig(scenario, V, B, horizon=HORIZON, burn_in=BURN_IN, seed=seed,
                                record_trace=True))
            elapsed = time.perf_counter() - start
            m = res.metrics
            rows.append({"B": B, "seed": seed, "cost": m.avg_cost, "drops": m.avg_drops.copy(),
                         "delay": m.per_hop_delay.copy(), "seconds": elapsed})
            traces.append(_check_trace(f"power B={B} seed={seed}", res, scenario, gamma, B, 1, rng))
    return {"rows": rows, "traces": traces, "gamma": gamma, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def throughput_runs():
    scenario = load_scenario("line_throughput")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        gamma = solve_dual(V, scenario).gamma
    rng = np.random.default_rng(2025)
    rows, traces = [], []
    for seed in SEEDS:
        res = run(RunConfig(scenario, V, 40, horizon=HORIZON, burn_in=BURN_IN, seed=seed, record_trace=True))
        m = res.metrics
        rows.append({"seed": seed, "throughput": m.throughput, "admitted": m.avg_admitted[0],
                     "drops": float(m.avg_drops.sum())})
        traces.append(_check_trace(f"throughput B=40 seed={seed}", res, scenario, gamma, 40, 1, rng))
    return {"rows": rows, "traces": traces}


@pytest.fixture(scope="session")
def random_traces():
    out = []
    rng = np.random.default_rng(7)
    i = 0
    sseed = 1000
    while len(out) < N_RANDOM_TRACES:
        s = random_scenario(np.random.default_rng(sseed), node_count=3, n_states=4, n_actions=4)
        sseed += 1
        if check_slater(s).eta <= 0:
            continue
        delta = compute_delta_max(s).delta_max
        B = 2 * delta + 2 * (i % 4)
        v = 10.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            gamma = solve_dual(v, s).gamma
            res = run(RunConfig(s, v, B, horizon=100_000, burn_in=0, seed=i, record_trace=True))
        out.append(_check_trace(f"random scenario {sseed - 1} B={B}", res, s, gamma, B, delta, rng))
        i += 1
    return out


def _per_b(rows, key):
    return np.array([np.mean([np.mean(r[key]) for r in rows if r["B"] == B]) for B in BUFFERS])


# --- 1-4 regressions ------------------------------------------------------

def test_c1_power_regression(power_sweep):
    rows = power_sweep["rows"]
    costs = np.array([r["cost"] for r in rows])
    worst = float(np.max(np.abs(costs - 3.761)))
    per_b = _per_b(rows, "cost")
    slowest = max(r["seconds"] for r in rows)
    ok = worst <= 0.02 and slowest < 60
    detail = (f"avg power per B {np.round(per_b, 4).tolist()}, every run within "
              f"{worst:.4f} of 3.761 (tol 0.02), slowest point {slowest:.2f} s")
    assert record(1, ok, detail), detail


def test_c2_drop_decay(power_sweep):
    drops = _per_b(power_sweep["rows"], "drops")
    slope = np.polyfit(np.array(BUFFERS, float), np.log(drops), 1)[0]
    monotone = bool(np.all(np.diff(drops) < 0))
    ok = drops[0] > 0 and slope < 0 and monotone
    detail = (f"mean per-hop drop rate {[f'{d:.3g}' for d in drops]}, "
              f"log-slope {slope:.4f}/packet, strictly decreasing: {monotone}")
    assert record(2, ok, detail), detail


def test_c3_delay_growth(power_sweep):
    delay = _per_b(power_sweep["rows"], "delay")
    x = np.array(BUFFERS, float)
    slope, icept = np.polyfit(x, delay, 1)
    fit = slope * x + icept
    r2 = 1 - np.sum((delay - fit) ** 2) / np.sum((delay - delay.mean()) ** 2)
    ok = r2 >= 0.98 and slope > 0
    detail = f"mean per-hop delay {np.round(delay, 3).tolist()}, slope {slope:.4f}, R^2 {r2:.6f}"
    assert record(3, ok, detail), detail


def test_c4_throughput(throughput_runs):
    rows = throughput_runs["rows"]
    thr = min(r["throughput"] for r in rows)
    drops = max(r["drops"] for r in rows)
    ok = thr >= 0.88 and drops < 0.01
    detail = (f"B=40: end-to-end throughput min {thr:.4f} over {len(rows)} seeds "
              f"(admitted {np.mean([r['admitted'] for r in rows]):.4f}), drop rate max {drops:.5f}")
    assert record(4, ok, detail), detail


# --- 5-6 queue lemmas -----------------------------------------------------

def test_c5_real_plus_fake_identity():
    delta, n_nodes, slots, n_seeds = 3, 4, 1_000_000, 20
    rngs = [np.random.default_rng(s) for s in range(n_seeds)]
    buffers = np.array([1 + s % 8 for s in range(n_seeds)])[:, None] * np.ones((1, n_nodes), np.int64)
    q0 = np.stack([r.integers(0, 10, n_nodes) for r in rngs])
    q = q0.copy()
    state = FloatingQueueState(np.zeros_like(q0), q0, buffers)
    mismatches = 0
    chunk = 10_000
    for lo in range(0, slots, chunk):
        arr = np.stack([r.integers(0, delta + 1, (chunk, 2, n_nodes)) for r in rngs], axis=1)
        for t in range(chunk):
            a, b = arr[t, :, 0], arr[t, :, 1]
            q = standard_update(q, a, b)
            state, _ = step_floating_node(state, a, 0, b)
            mismatches += int(np.count_nonzero(state.real + state.fake != q))
    # network level: the compiled loop against its own standard side
    engine_bad = 0
    for seed in range(n_seeds):
        s = random_scenario(np.random.default_rng(500 + seed), node_count=3, max_flow=delta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = run(RunConfig(s, 5.0, 1 + seed % 8, horizon=slots, burn_in=0, seed=seed, mode="both",
                                fake_init=[seed % 5, 0, 3]))
        engine_bad += res.sum_mismatches
    ok = mismatches == 0 and engine_bad == 0
    detail = (f"{n_seeds} seeds x {slots} slots x {n_nodes} nodes through the queue module: "
              f"{mismatches} mismatches; compiled network runs (20 x 1e6 slots): {engine_bad} mismatches")
    assert record(5, ok, detail), detail


def test_c6_drops_grow_fake_queue(power_sweep, throughput_runs):
    traces = power_sweep["traces"] + throughput_runs["traces"]
    engine = sum(t.drop_fake_engine for t in traces)
    recorded = sum(t.drop_fake_trace for t in traces)
    drop_slots = sum(t.drop_slots for t in traces)
    replay = [f"{t.label}: {t.dynamics[0]}" for t in traces if t.dynamics]
    ok = engine == 0 and recorded == 0 and not replay
    detail = (f"{len(traces)} runs, {sum(t.slots for t in traces)} slots, {drop_slots} (slot, node) drops: "
              f"{engine} engine / {recorded} trace violations, replay mismatches {len(replay)}")
    assert record(6, ok, detail), detail


# --- 7-8 pathwise oracles -------------------------------------------------

def test_c7_cumulative_bound(power_sweep, throughput_runs, random_traces):
    traces = power_sweep["traces"] + throughput_runs["traces"] + random_traces
    bad = sum(t.window_violations for t in traces)
    exact_bad = sum(t.exact_violations for t in traces)
    ok = bad == 0 and exact_bad == 0 and len(random_traces) == N_RANDOM_TRACES
    detail = (f"{len(traces)} traces x {WINDOWS_PER_TRACE} windows x nodes: {bad} violations "
              f"(plus {exact_bad} of {sum(t.exact_checked for t in traces)} slack-free checks at Q^r(start)=0)")
    assert record(7, ok, detail), detail


def test_c8_interval_lemmas_and_transform(power_sweep, throughput_runs, random_traces):
    traces = power_sweep["traces"] + throughput_runs["traces"] + random_traces
    reps = [r for t in traces for r in t.interval_reports]
    violations = [v for r in reps for v in r.violations]
    n_int = sum(r.intervals for r in reps)
    minima = sum(r.minima_checked for r in reps)
    slack = sum(len(r.slack_applied) for r in reps)
    seg = sum(t.segments_checked for t in traces)
    seg_fake = sum(t.segments_with_fake_service for t in traces)
    mism = [m for t in traces for m in t.segment_mismatches]
    ok = not violations and seg >= 1000 and not mism
    detail = (f"{len(reps)} node traces, {n_int} intervals, {minima} local minima, {slack} slack cases: "
              f"{len(violations)} violations; {seg} segments transformed ({seg_fake} with fake service), "
              f"{len(mism)} replay mismatches")
    if violations:
        detail += f"; first: {violations[0]}"
    assert record(8, ok, detail), detail


# --- 9 dual oracle --------------------------------------------------------

def test_c9_dual_oracle():
    kink = single_state([(0.0, [(0, 1, 1)]), (2.0, [(0, 1, 1), (1, 0, 2)])])
    line = load_scenario("line_power")
    gaps = {}
    for name, s in (("single-state", kink), ("line-power", line)):
        sol = solve_dual(V, s)
        ref = brute_force_dual(V, s)
        gaps[name] = float(np.max(np.abs(sol.gamma - ref.gamma)))
    analytic = abs(brute_force_dual(V, kink).gamma[0] - V)

    rng = np.random.default_rng(9)
    scenarios = [line, build_line_network(0.92, 0.9, "throughput_max")] + \
        [random_scenario(np.random.default_rng(s), node_count=4) for s in range(8)]
    n_pairs, conc_bad, sub_bad, worst_c, worst_s = 10_000, 0, 0, 0.0, 0.0
    per = n_pairs // len(scenarios)
    for s in scenarios:
        scale = 2 * V * 5
        g1 = rng.uniform(0, scale, (per, 4))
        g2 = rng.uniform(0, scale, (per, 4))
        lam = rng.uniform(0, 1, (per, 1))
        v1, v2 = dual_values(g1, V, s), dual_values(g2, V, s)
        vm = dual_values(lam * g1 + (1 - lam) * g2, V, s)
        gap_c = lam[:, 0] * v1 + (1 - lam[:, 0]) * v2 - vm
        conc_bad += int(np.sum(gap_c > 1e-9))
        worst_c = max(worst_c, float(gap_c.max()))
        sub = np.array([dual_subgradient(g, V, s) for g in g1])
        gap_s = v2 - (v1 + np.sum(sub * (g2 - g1), axis=1))
        sub_bad += int(np.sum(gap_s > 1e-9))
        worst_s = max(worst_s, float(gap_s.max()))
    ok = max(gaps.values()) <= 0.5 and analytic == 0 and conc_bad == 0 and sub_bad == 0
    detail = (f"solve vs oracle max gap: single-state {gaps['single-state']:.4f}, line-power "
              f"{gaps['line-power']:.4f} (tol 0.5); {per * len(scenarios)} pairs: concavity "
              f"{conc_bad} / subgradient {sub_bad} failures at 1e-9 (worst {worst_c:.2e}, {worst_s:.2e})")
    assert record(9, ok, detail), detail


# --- 10 decision equivalence ----------------------------------------------

def test_c10_decision_equivalence():
    mismatched, compared = [], 0
    for name in ("line_power", "line_throughput"):
        s = load_scenario(name)
        for seed in range(20):
            fake = [seed * 37 % 400, seed * 11 % 100, 0, seed % 7]
            res = run(RunConfig(s, V, 8 + 2 * (seed % 5), horizon=100_000, burn_in=0, seed=seed,
                                mode="both", keep_actions=True, fake_init=fake))
            compared += len(res.actions)
            if not np.array_equal(res.actions, res.standard_actions):
                mismatched.append((name, seed))
    ok = not mismatched
    detail = f"2 scenarios x 20 seeds x 1e5 slots ({compared} decisions): {len(mismatched)} differing runs"
    assert record(10, ok, detail), detail


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
