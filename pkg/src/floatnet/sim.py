"""Run configuration, single runs and parameter sweeps."""

from __future__ import annotations

import io
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .engine import (ACC_A, ACC_AR, ACC_AR_ADM, ACC_DROPS, ACC_Q, ACC_QR, CNT_EXITS, CNT_SUM_MISMATCH,
                     CNT_DROP_FAKE, CNT_MAXQ, CNT_MAXQ_STD, MODES, simulate)
from .model import Scenario, compute_delta_max, load_scenario
from .pathcheck import MetricsReport, Trace, _delays, tail_from_counts


@dataclass
class RunConfig:
    scenario: str | Path | Scenario
    v_param: float
    buffer_size: int
    horizon: int = 1_000_000
    burn_in: int | None = None          # default 10 * V
    seed: int = 0
    mode: str = "floating"
    fake_init: list[int] | None = None
    trace_path: str | Path | None = None
    record_trace: bool = False
    keep_actions: bool = False
    gamma: np.ndarray | None = None     # enables the deviation tail
    r_max: int | None = None            # default B

    def resolved_burn_in(self) -> int:
        return int(round(10 * self.v_param)) if self.burn_in is None else int(self.burn_in)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {sorted(MODES)}, got {self.mode!r}")
        if not self.v_param >= 0:
            raise ValueError("v_param must be >= 0")
        if int(self.buffer_size) != self.buffer_size or self.buffer_size < 1:
            raise ValueError("buffer_size must be a positive integer")
        if self.horizon <= self.resolved_burn_in():
            raise ValueError("empty measurement window")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class RunResult:
    metrics: MetricsReport
    trace: Trace | None = None
    actions: np.ndarray | None = None
    standard_actions: np.ndarray | None = None
    standard_avg_cost: float | None = None
    sum_mismatches: int = 0
    drop_fake_violations: int = 0
    max_standard_backlog: int = 0


def _scenario(src) -> Scenario:
    return src if isinstance(src, Scenario) else load_scenario(src)


def run(config: RunConfig) -> RunResult:
    config.validate()
    scenario = _scenario(config.scenario)
    burn_in = config.resolved_burn_in()
    B = int(config.buffer_size)
    delta = compute_delta_max(scenario).delta_max
    if config.mode != "standard" and B < 2 * delta:
        warnings.warn(f"buffer_size {B} < 2 * delta_max = {2 * delta}; drop lemmas do not apply",
                      RuntimeWarning, stacklevel=2)
    r_max = B if config.r_max is None else int(config.r_max)
    record = config.record_trace or config.trace_path is not None
    out = simulate(scenario, config.v_param, B, config.horizon, burn_in, int(config.seed),
                   mode=config.mode, fake_init=config.fake_init, gamma=config.gamma, r_max=r_max,
                   record_from=0 if record else None, keep_actions=config.keep_actions)

    slots = out.slots
    acc = out.acc / slots
    tail = []
    if out.dev_hist is not None:
        counts = np.cumsum(out.dev_hist[::-1])[::-1][: r_max + 1]
        tail = tail_from_counts(counts, slots)
    penalty = scenario.penalty_per_drop
    if config.mode == "standard":
        nan = np.full(scenario.node_count, np.nan)
        metrics = MetricsReport(
            slots=slots, burn_in=burn_in, buffer_size=B,
            avg_cost=out.cost_sum / slots, avg_dpp_cost=out.cost_sum / slots,
            avg_drops=np.zeros(scenario.node_count), avg_real_arrivals=nan, avg_admitted=nan,
            avg_arrivals=acc[ACC_A], avg_real_backlog=nan, avg_backlog=acc[ACC_Q],
            per_hop_delay=nan, delay_infinite=np.zeros(scenario.node_count, bool), occupancy_delay=nan,
            throughput=float("nan"), max_total_backlog=int(out.counters[CNT_MAXQ]), deviation_tail=tail)
    else:
        delay, inf, occ = _delays(B, acc[ACC_AR_ADM], acc[ACC_QR])
        dpp = out.cost_sum / slots
        metrics = MetricsReport(
            slots=slots, burn_in=burn_in, buffer_size=B,
            avg_cost=dpp + penalty * float(acc[ACC_DROPS].sum()), avg_dpp_cost=dpp,
            avg_drops=acc[ACC_DROPS], avg_real_arrivals=acc[ACC_AR], avg_admitted=acc[ACC_AR_ADM],
            avg_arrivals=acc[ACC_A], avg_real_backlog=acc[ACC_QR], avg_backlog=acc[ACC_Q],
            per_hop_delay=delay, delay_infinite=inf, occupancy_delay=occ,
            throughput=float(out.counters[CNT_EXITS]) / slots,
            max_total_backlog=int(out.counters[CNT_MAXQ]), deviation_tail=tail)

    trace = Trace.from_raw(out.trace, B) if out.trace is not None else None
    if trace is not None and config.trace_path is not None:
        trace.to_csv(config.trace_path)
    return RunResult(
        metrics=metrics, trace=trace, actions=out.actions, standard_actions=out.standard_actions,
        standard_avg_cost=out.cost_sum_std / slots if config.mode == "both" else None,
        sum_mismatches=int(out.counters[CNT_SUM_MISMATCH]),
        drop_fake_violations=int(out.counters[CNT_DROP_FAKE]),
        max_standard_backlog=int(out.counters[CNT_MAXQ_STD]),
    )


# ---------------------------------------------------------------------------
# sweeps

AXES = {"buffer_size": "buffer_size", "buffer": "buffer_size", "v_param": "v_param", "v": "v_param"}


@dataclass
class SweepSpec:
    base: RunConfig
    axis: str
    values: list = field(default_factory=list)
    seeds_per_point: int = 1

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {sorted(set(AXES.values()))}")
        self.axis = AXES[self.axis]
        if not self.values:
            raise ValueError("sweep values must be nonempty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("sweep values must be strictly increasing")
        if self.seeds_per_point < 1:
            raise ValueError("seeds_per_point must be >= 1")

    def rows(self) -> list[tuple[float, int, RunConfig]]:
        """One config per (value, seed index); seed index ``i`` uses ``base.seed + i`` at every value."""
        out = []
        for value in self.values:
            for i in range(self.seeds_per_point):
                cfg = replace(self.base, **{self.axis: value}, seed=int(self.base.seed) + i,
                              trace_path=None, record_trace=False, keep_actions=False)
                out.append((value, cfg.seed, cfg))
        return out


def _sweep_row(args) -> dict:
    value, seed, cfg = args
    m = run(cfg).metrics
    row = {"axis_value": value, "seed": seed, "avg_cost": m.avg_cost}
    for n, d in enumerate(m.per_hop_delay, start=1):
        row[f"delay_{n}"] = d
    for n, d in enumerate(m.avg_drops, start=1):
        row[f"drop_{n}"] = d
    row["throughput"] = m.throughput
    return row


def sweep(spec: SweepSpec, out: str | Path | None = None, workers: int = 1) -> pd.DataFrame:
    """Run every sweep row and return (and optionally write) the ordered result table."""
    scenario = _scenario(spec.base.scenario)
    base = replace(spec.base, scenario=scenario)
    spec = replace(spec, base=base)
    rows = spec.rows()
    for _, _, cfg in rows:
        cfg.validate()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_row, rows))
    else:
        results = [_sweep_row(r) for r in rows]
    df = pd.DataFrame(results)
    if out is not None:
        Path(out).write_text(sweep_csv(df))
    return df


def sweep_csv(df: pd.DataFrame) -> str:
    buf = io.StringIO()
    df.to_csv(buf, index=False, float_format="%.9g", lineterminator="\n")
    return buf.getvalue()
