"""Sample-path oracles over recorded floating-queue traces.

Everything here reads an immutable ``Trace`` and recomputes quantities from
the recorded per-slot tuple ``(a_r, a_f, a_r', a_f', b_r, b_f, Q^r, Q^f)``:
replay of the queue dynamics, the lower-bound admission count, the
high/low interval partition of the fake backlog, the per-interval
domination inequalities, the non-decreasing segment transform, and the
steady-state metrics.

Windows are half-open slot ranges ``[start, stop)`` in trace-relative
indices.  The closed range ``{t0, ..., t0 + T}`` used for the interval
partition corresponds to ``start = t0`` and ``stop = t0 + T + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from numba import njit

from .model import Scenario

CSV_COLUMNS = ["t", "n", "state", "action", "a_r", "a_f", "a_r_adm", "a_f_adm",
               "b_r", "b_f", "q_real", "q_fake", "cost", "drops"]
NODE_FIELDS = ("a_r", "a_f", "a_r_adm", "a_f_adm", "b_r", "b_f", "q_real", "q_fake")


class PreconditionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# trace container

@dataclass(frozen=True, eq=False)
class Trace:
    """Per-slot, per-node record of a floating-queue run.

    Node arrays have shape ``(T, N)``; backlogs are slot-start values.  The
    backlogs after the last slot follow from the dynamics and are exposed as
    ``q_real_next`` / ``q_fake_next``.
    """

    state: np.ndarray
    action: np.ndarray
    cost: np.ndarray
    a_r: np.ndarray
    a_f: np.ndarray
    a_r_adm: np.ndarray
    a_f_adm: np.ndarray
    b_r: np.ndarray
    b_f: np.ndarray
    q_real: np.ndarray
    q_fake: np.ndarray
    buffer_size: int
    t0: int = 0
    exits: np.ndarray | None = None

    def __post_init__(self):
        for name in NODE_FIELDS:
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.ndim == 1:
                arr = arr[:, None]
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("state", "action"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        object.__setattr__(self, "cost", np.asarray(self.cost, dtype=float))
        if self.exits is not None:
            object.__setattr__(self, "exits", np.asarray(self.exits, dtype=np.int64))
        shape = self.q_real.shape
        for name in NODE_FIELDS:
            if getattr(self, name).shape != shape:
                raise ValueError(f"trace field {name} has shape {getattr(self, name).shape}, expected {shape}")

    @classmethod
    def from_raw(cls, raw, buffer_size: int) -> "Trace":
        """Wrap an ``engine.RawTrace``."""
        return cls(state=raw.state, action=raw.action, cost=raw.cost,
                   **{f: getattr(raw, f) for f in NODE_FIELDS},
                   buffer_size=int(buffer_size), t0=raw.t0, exits=raw.exits)

    @property
    def length(self) -> int:
        return self.q_real.shape[0]

    @property
    def node_count(self) -> int:
        return self.q_real.shape[1]

    @property
    def drops(self) -> np.ndarray:
        return self.a_r - self.a_r_adm

    @property
    def backlog(self) -> np.ndarray:
        return self.q_real + self.q_fake

    @property
    def q_real_next(self) -> np.ndarray:
        return self.q_real[-1] - self.b_r[-1] + self.a_r_adm[-1]

    @property
    def q_fake_next(self) -> np.ndarray:
        return np.maximum(self.q_fake[-1] - self.b_f[-1], 0) + self.a_f_adm[-1]

    def q_fake_ext(self) -> np.ndarray:
        """``Q^f`` at slots ``0..T`` (one row longer than the trace)."""
        return np.vstack([self.q_fake, self.q_fake_next[None, :]])

    def q_real_ext(self) -> np.ndarray:
        return np.vstack([self.q_real, self.q_real_next[None, :]])

    def segment(self, start: int, stop: int) -> "Trace":
        sl = slice(start, stop)
        return Trace(state=self.state[sl], action=self.action[sl], cost=self.cost[sl],
                     **{f: getattr(self, f)[sl] for f in NODE_FIELDS},
                     buffer_size=self.buffer_size, t0=self.t0 + start,
                     exits=None if self.exits is None else self.exits[sl])

    def node(self, n: int) -> "Trace":
        """Single-node view (0-based node index) with ``(T, 1)`` arrays."""
        return Trace(state=self.state, action=self.action, cost=self.cost,
                     **{f: getattr(self, f)[:, n:n + 1] for f in NODE_FIELDS},
                     buffer_size=self.buffer_size, t0=self.t0, exits=None)

    # -- text I/O ---------------------------------------------------------

    def to_frame(self) -> pd.DataFrame:
        t_len, n = self.q_real.shape
        cols = {
            "t": np.repeat(np.arange(self.t0, self.t0 + t_len), n),
            "n": np.tile(np.arange(1, n + 1), t_len),
            "state": np.repeat(self.state, n),
            "action": np.repeat(self.action, n),
        }
        for f in NODE_FIELDS:
            cols[f] = getattr(self, f).ravel()
        cols["cost"] = np.repeat(self.cost, n)
        cols["drops"] = self.drops.ravel()
        return pd.DataFrame(cols, columns=CSV_COLUMNS)

    def to_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.9g", lineterminator="\n")

    @classmethod
    def from_frame(cls, df: pd.DataFrame, buffer_size: int) -> "Trace":
        missing = [c for c in CSV_COLUMNS if c not in df.columns]
        if missing:
            raise ValueError(f"trace is missing columns {missing}")
        df = df.sort_values(["t", "n"], kind="stable")
        n = int(df["n"].max())
        t_len = len(df) // n
        if t_len * n != len(df) or not np.array_equal(df["n"].to_numpy(), np.tile(np.arange(1, n + 1), t_len)):
            raise ValueError("trace must hold one row per (slot, node) for nodes 1..N")
        first = df.iloc[::n]
        ts = first["t"].to_numpy()
        if np.any(np.diff(ts) != 1):
            raise ValueError("trace slots must be consecutive")
        trace = cls(state=first["state"].to_numpy(), action=first["action"].to_numpy(),
                    cost=first["cost"].to_numpy(dtype=float),
                    **{f: df[f].to_numpy(dtype=np.int64).reshape(t_len, n) for f in NODE_FIELDS},
                    buffer_size=int(buffer_size), t0=int(ts[0]) if t_len else 0)
        if not np.array_equal(trace.drops.ravel(), df["drops"].to_numpy(dtype=np.int64)):
            raise ValueError("drops column disagrees with a_r - a_r_adm")
        return trace

    @classmethod
    def from_csv(cls, path: str | Path, buffer_size: int) -> "Trace":
        return cls.from_frame(pd.read_csv(path), buffer_size)


# ---------------------------------------------------------------------------
# replay

def check_dynamics(trace: Trace, scenario: Scenario | None = None, chunk: int = 100_000) -> list[str]:
    """Recompute every recorded field from ``(Q^r, Q^f, a_r, a_f, b)`` and report mismatches.

    With a scenario, also checks the per-node totals against the chosen
    action's service matrix and the ascending-j real/fake link split.
    """
    bad = []
    B = trace.buffer_size
    qr, qf = trace.q_real, trace.q_fake
    b = trace.b_r + trace.b_f

    def flag(mask, what):
        if np.any(mask):
            t, n = np.argwhere(np.atleast_2d(mask))[0]
            bad.append(f"{what} at slot {trace.t0 + t}, node {n + 1}")

    flag((qr < 0) | (qr > B), "real backlog outside [0, B]")
    flag(qf < 0, "negative fake backlog")
    flag(trace.b_r != np.minimum(qr, b), "service split b_r != min(Q^r, b)")
    flag(trace.a_r_adm != np.minimum(B - qr, trace.a_r), "admission a_r' != min(B - Q^r, a_r)")
    flag(trace.a_f_adm != trace.a_f + trace.a_r - trace.a_r_adm, "a_f' != a_f + drops")
    if trace.length > 1:
        flag(qr[1:] != qr[:-1] - trace.b_r[:-1] + trace.a_r_adm[:-1], "real-queue update")
        flag(qf[1:] != np.maximum(qf[:-1] - trace.b_f[:-1], 0) + trace.a_f_adm[:-1], "fake-queue update")
    if scenario is not None:
        t = scenario.tables
        if trace.node_count != scenario.node_count:
            return bad + ["trace and scenario node counts differ"]
        flat = t.offsets[trace.state] + trace.action
        if np.any(trace.action >= t.counts[trace.state]) or np.any(trace.action < 0):
            return bad + ["action id out of range for its state"]
        flag(np.atleast_2d(trace.cost != t.costs[flat]).T, "cost differs from the scenario table")
        flag(b != t.departures[flat], "b_r + b_f differs from the action's services")
        flag(trace.a_r + trace.a_f != t.arrivals[flat], "a_r + a_f differs from the action's arrivals")
        for lo in range(0, trace.length, chunk):
            sl = slice(lo, lo + chunk)
            exp_ar, exits = _real_arrivals(t.services[flat[sl]], trace.b_r[sl])
            if np.any(exp_ar != trace.a_r[sl]):
                r, n = np.argwhere(exp_ar != trace.a_r[sl])[0]
                bad.append(f"link split: a_r differs at slot {trace.t0 + lo + r}, node {n + 1}")
                break
            if trace.exits is not None and np.any(exits != trace.exits[sl]):
                bad.append("recorded exits differ from the link split")
                break
    return bad


def _real_arrivals(mu: np.ndarray, b_r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched ascending-j fill: real arrivals per node and real exits per slot."""
    rows = mu[:, 1:, :]
    filled_before = np.cumsum(rows, axis=2) - rows
    mu_r = np.clip(b_r[:, :, None] - filled_before, 0, rows)
    a_r = mu[:, 0, 1:] + mu_r[:, :, 1:].sum(axis=1)
    return a_r, mu_r[:, :, 0].sum(axis=1)


def real_exits(trace: Trace, scenario: Scenario) -> np.ndarray:
    """Real packets leaving the network per slot, recomputed from the link split."""
    if trace.exits is not None:
        return trace.exits
    t = scenario.tables
    flat = t.offsets[trace.state] + trace.action
    out = np.empty(trace.length, np.int64)
    for lo in range(0, trace.length, 100_000):
        sl = slice(lo, lo + 100_000)
        out[sl] = _real_arrivals(t.services[flat[sl]], trace.b_r[sl])[1]
    return out


def replay_node(q_real0: int, q_fake0: int, a_r, a_f, b, buffer_size: int) -> dict[str, np.ndarray]:
    """Sequential single-node replay through ``queues.step_floating_node``."""
    from .queues import FloatingQueueState, step_floating_node

    state = FloatingQueueState(np.int64(q_real0), np.int64(q_fake0), buffer_size)
    out = {f: np.zeros(len(a_r), np.int64) for f in NODE_FIELDS}
    for t in range(len(a_r)):
        out["q_real"][t] = state.real
        out["q_fake"][t] = state.fake
        state, split = step_floating_node(state, a_r[t], a_f[t], b[t])
        for f, v in (("a_r", split.a_r), ("a_f", split.a_f), ("a_r_adm", split.a_r_admitted),
                     ("a_f_adm", split.a_f_admitted), ("b_r", split.b_r), ("b_f", split.b_f)):
            out[f][t] = v
    out["q_real_next"] = np.int64(state.real)
    out["q_fake_next"] = np.int64(state.fake)
    return out


def drop_fake_violations(trace: Trace) -> np.ndarray:
    """``(slot, node)`` pairs with a drop but no strict fake-backlog increase."""
    qf = trace.q_fake_ext()
    bad = (trace.drops > 0) & (qf[1:] <= qf[:-1])
    return np.argwhere(bad)


# ---------------------------------------------------------------------------
# lower-bound policy

@dataclass(frozen=True, eq=False)
class LowerBoundTrace:
    a_r_hat: np.ndarray      # (T, N)
    d_hat: np.ndarray        # (T, N)
    band_lo: np.ndarray      # (N,), open interval (band_lo, band_hi)
    band_hi: np.ndarray
    gamma: np.ndarray
    buffer_size: int
    delta_max: int


def lower_bound_admissions(trace: Trace, gamma, buffer_size: int, delta_max: int) -> LowerBoundTrace:
    """Admit real arrivals only when the total backlog lies inside the band around ``gamma``."""
    B = int(buffer_size)
    if B % 2 or B < 2 * delta_max:
        raise PreconditionError("lower-bound policy preconditions violated")
    gamma = np.asarray(getattr(gamma, "gamma", gamma), dtype=float).reshape(-1)
    if gamma.shape != (trace.node_count,):
        raise ValueError(f"gamma must have length {trace.node_count}")
    lo = gamma - B / 2 + delta_max
    hi = gamma + B / 2 - delta_max
    q = trace.backlog
    inside = (q > lo) & (q < hi)
    a_hat = np.where(inside, trace.a_r, 0)
    return LowerBoundTrace(a_r_hat=a_hat, d_hat=trace.a_r - a_hat, band_lo=lo, band_hi=hi,
                           gamma=gamma, buffer_size=B, delta_max=int(delta_max))


@dataclass
class NodeBound:
    node: int
    lhs: int          # admitted real arrivals
    rhs: int          # lower-bound admissions minus B
    holds: bool
    exact_holds: bool | None = None   # without the -B slack, reported when Q^r(start) = 0


def verify_cumulative_bound(trace: Trace, lower: LowerBoundTrace, window) -> list[NodeBound]:
    """Check ``sum a_r' >= sum a_r_hat - B`` over ``[start, stop)`` at every node."""
    start, stop = int(window[0]), int(window[1])
    if not 0 <= start <= stop <= trace.length:
        raise ValueError("window must lie within the trace")
    B = lower.buffer_size
    lhs = trace.a_r_adm[start:stop].sum(axis=0)
    hat = lower.a_r_hat[start:stop].sum(axis=0)
    out = []
    for n in range(trace.node_count):
        exact = None
        if start < trace.length and trace.q_real[start, n] == 0:
            exact = bool(lhs[n] >= hat[n])
        out.append(NodeBound(n + 1, int(lhs[n]), int(hat[n] - B), bool(lhs[n] >= hat[n] - B), exact))
    return out


def cumulative_bound_violations(trace: Trace, lower: LowerBoundTrace, starts, stops) -> dict:
    """Vectorized form of ``verify_cumulative_bound`` over many windows."""
    starts = np.asarray(starts, np.int64)
    stops = np.asarray(stops, np.int64)
    c_adm = np.vstack([np.zeros((1, trace.node_count), np.int64), np.cumsum(trace.a_r_adm, axis=0)])
    c_hat = np.vstack([np.zeros((1, trace.node_count), np.int64), np.cumsum(lower.a_r_hat, axis=0)])
    lhs = c_adm[stops] - c_adm[starts]
    hat = c_hat[stops] - c_hat[starts]
    general = lhs < hat - lower.buffer_size
    empty_start = trace.q_real_ext()[starts] == 0
    exact = empty_start & (lhs < hat)
    return {
        "windows": len(starts),
        "violations": int(general.sum()),
        "exact_checked": int(empty_start.sum()),
        "exact_violations": int(exact.sum()),
        "where": [(int(starts[i]), int(stops[i]), int(n + 1)) for i, n in np.argwhere(general | exact)],
    }


# ---------------------------------------------------------------------------
# interval partition

@njit(cache=True)
def _next_greater_smaller(q):
    """Index of the next strictly greater / strictly smaller entry (len(q) if none)."""
    m = q.shape[0]
    ng = np.full(m, m, np.int64)
    ns = np.full(m, m, np.int64)
    stack_g = np.empty(m, np.int64)
    stack_s = np.empty(m, np.int64)
    hg = 0
    hs = 0
    for i in range(m):
        while hg > 0 and q[stack_g[hg - 1]] < q[i]:
            hg -= 1
            ng[stack_g[hg]] = i
        stack_g[hg] = i
        hg += 1
        while hs > 0 and q[stack_s[hs - 1]] > q[i]:
            hs -= 1
            ns[stack_s[hs]] = i
        stack_s[hs] = i
        hs += 1
    return ng, ns


@njit(cache=True)
def _partition(qf, start, stop, theta, is_min, runs, intervals):
    """Fill ``runs`` (t_k, t_k') and ``intervals`` (k, t-, t+, capped); return their counts.

    ``qf`` has one more entry than the trace; ``is_min[t]`` is the look-ahead
    half of the local-minimum test.
    """
    end = stop - 1
    n_runs = 0
    n_int = 0
    t = start
    while t <= end:
        if qf[t] >= theta:
            t += 1
            continue
        tk = t
        while t + 1 <= end and qf[t + 1] < theta:
            t += 1
        tkp = t
        runs[n_runs, 0] = tk
        runs[n_runs, 1] = tkp
        prev_plus = tk - 1
        while True:
            tm = tkp
            capped = 1
            for u in range(prev_plus + 1, tkp + 1):
                dec = u == start or qf[u] < qf[u - 1]
                if dec and is_min[u]:
                    tm = u
                    capped = 0
                    break
            tp = tkp
            for u in range(tm + 1, tkp + 1):
                if qf[u] > qf[u + 1]:
                    tp = u
                    break
            intervals[n_int, 0] = n_runs
            intervals[n_int, 1] = tm
            intervals[n_int, 2] = tp
            intervals[n_int, 3] = capped
            n_int += 1
            if tp == tkp:
                break
            prev_plus = tp
        n_runs += 1
        t = tkp + 1
    return n_runs, n_int


@dataclass(frozen=True, eq=False)
class IntervalPartition:
    node: int                  # 1-based
    start: int
    stop: int
    threshold: float           # gamma_n - B/2
    low: np.ndarray            # bool over [start, stop): membership in T_L
    runs: np.ndarray           # (K, 2) rows (t_k, t_k')
    intervals: np.ndarray      # (I, 4) rows (k, t_kj_minus, t_kj_plus, capped)
    t_a: np.ndarray            # slots t_k - 1 inside the window

    @property
    def t_low(self) -> np.ndarray:
        return self.start + np.flatnonzero(self.low)

    @property
    def t_high(self) -> np.ndarray:
        return self.start + np.flatnonzero(~self.low)

    @property
    def K(self) -> int:
        return len(self.runs)

    def J(self, k: int) -> int:
        return int(np.sum(self.intervals[:, 0] == k))


def local_min_lookahead(q_fake_ext: np.ndarray) -> np.ndarray:
    """``True`` where the fake backlog reaches a strictly higher value before a strictly lower one."""
    ng, ns = _next_greater_smaller(np.ascontiguousarray(q_fake_ext, dtype=np.int64))
    m = len(q_fake_ext)
    return (ns == m) | (ng < ns)


def partition_intervals(trace: Trace, node: int, gamma, buffer_size: int, window=None,
                        _lookahead: np.ndarray | None = None) -> IntervalPartition:
    """Split ``[start, stop)`` at node ``node`` (1-based) into high/low slots and local-min/max intervals."""
    start, stop = (0, trace.length) if window is None else (int(window[0]), int(window[1]))
    if not 0 <= start < stop <= trace.length:
        raise ValueError("window must be a nonempty range within the trace")
    gamma = np.asarray(getattr(gamma, "gamma", gamma), dtype=float).reshape(-1)
    theta = float(gamma[node - 1] - buffer_size / 2)
    qf = np.ascontiguousarray(trace.q_fake_ext()[:, node - 1])
    is_min = local_min_lookahead(qf) if _lookahead is None else _lookahead
    size = stop - start
    runs = np.zeros((size // 2 + 2, 2), np.int64)
    intervals = np.zeros((size + 1, 4), np.int64)
    n_runs, n_int = _partition(qf, start, stop, theta, is_min, runs, intervals)
    runs = runs[:n_runs].copy()
    t_a = runs[:, 0] - 1
    t_a = t_a[t_a >= start]
    return IntervalPartition(node=node, start=start, stop=stop, threshold=theta,
                             low=qf[start:stop] < theta, runs=runs,
                             intervals=intervals[:n_int].copy(), t_a=t_a)


# ---------------------------------------------------------------------------
# interval lemmas

@dataclass
class IntervalReport:
    node: int
    window: tuple[int, int]
    runs: int = 0
    intervals: int = 0
    nondecreasing_type: int = 0
    decreasing_type: int = 0
    capped: int = 0
    minima_checked: int = 0
    shared_slots: int = 0
    slack_applied: list[str] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_interval_lemmas(trace: Trace, partition: IntervalPartition, lower: LowerBoundTrace) -> IntervalReport:
    """Check the high/low domination inequalities and the local-minimum properties.

    * high slots outside T_A: sum a_r' >= sum a_r_hat;
    * low slots plus T_A: same inequality (with a -B slack only when the
      window starts inside a local minimum with a nonempty real queue);
    * at every local minimum t-: Q^r(t-) = a_r(t- - 1), a_r_hat(t- - 1) = 0,
      Q^f(t- - 1) < gamma - B/2 + delta; at every local maximum t+:
      Q^f(t+ + 1) < gamma - B/2 + delta;
    * each [t- - 1, t+] interval: sum a_r' >= sum a_r_hat;
    * the stretches before the first minimum and between a maximum and the
      next minimum have no drops;
    * the pieces cover every low run together with its T_A slot; adjacent
      intervals may share one slot, counted in ``shared_slots``.
    """
    n = partition.node - 1
    start, stop = partition.start, partition.stop
    B, delta = lower.buffer_size, lower.delta_max
    rep = IntervalReport(node=partition.node, window=(trace.t0 + start, trace.t0 + stop))
    v = rep.violations
    adm = trace.a_r_adm[:, n]
    hat = lower.a_r_hat[:, n]
    a_r = trace.a_r[:, n]
    drops = trace.drops[:, n]
    qr = trace.q_real_ext()[:, n]
    qf = trace.q_fake_ext()[:, n]
    c_adm = np.concatenate([[0], np.cumsum(adm)])
    c_hat = np.concatenate([[0], np.cumsum(hat)])
    c_drop = np.concatenate([[0], np.cumsum(drops)])

    def span(c, lo, hi):          # inclusive slot range
        return int(c[hi + 1] - c[lo]) if hi >= lo else 0

    def slot(t):
        return trace.t0 + int(t)

    limit = partition.threshold + delta

    # high/low split
    in_a = np.zeros(stop - start, bool)
    in_a[partition.t_a - start] = True
    high_not_a = ~partition.low & ~in_a
    low_or_a = partition.low | in_a
    if np.any(partition.low & in_a):
        v.append("T_A overlaps T_L")
    s_adm, s_hat = adm[start:stop], hat[start:stop]
    lhs, rhs = int(s_adm[high_not_a].sum()), int(s_hat[high_not_a].sum())
    if lhs < rhs:
        v.append(f"high-slot bound: {lhs} < {rhs} on node {partition.node}")
    lhs, rhs = int(s_adm[low_or_a].sum()), int(s_hat[low_or_a].sum())
    low_slack = 0
    rep.runs = partition.K
    rep.intervals = len(partition.intervals)

    # per-run tiling and pieces
    for k, (tk, tkp) in enumerate(partition.runs):
        rows = partition.intervals[partition.intervals[:, 0] == k]
        cursor = tk - 1 if tk - 1 >= start else start
        first_minus = rows[0, 1]
        # stretch before the first minimum
        lo, hi = cursor, first_minus - 2
        if hi >= lo and span(c_drop, lo, hi) > 0:
            v.append(f"drops before first local minimum in [{slot(lo)}, {slot(hi)}], node {partition.node}")
        for idx, (_, tm, tp, capped) in enumerate(rows):
            if tm < tk or tp < tm or tp > tkp:
                v.append(f"interval ({slot(tm)}, {slot(tp)}) outside its run [{slot(tk)}, {slot(tkp)}]")
                continue
            rep.capped += int(capped)
            lo = max(tm - 1, start)
            if lo < cursor:
                # a minimum right after a maximum: the two intervals share slot t+ of the first
                rep.shared_slots += cursor - lo
            # local minimum properties
            if not capped and tm - 1 >= start:
                rep.minima_checked += 1
                if qr[tm] != a_r[tm - 1]:
                    v.append(f"Q^r(t-) != a_r(t- - 1) at t- = {slot(tm)}, node {partition.node}")
                if hat[tm - 1] != 0:
                    v.append(f"a_r_hat(t- - 1) != 0 at t- = {slot(tm)}, node {partition.node}")
                if not qf[tm - 1] < limit:
                    v.append(f"Q^f(t- - 1) >= gamma - B/2 + delta at t- = {slot(tm)}, node {partition.node}")
            if tp + 1 <= trace.length and tp + 1 <= stop and not qf[tp + 1] < limit:
                v.append(f"Q^f(t+ + 1) >= gamma - B/2 + delta at t+ = {slot(tp)}, node {partition.node}")
            # interval domination
            slack = 0
            if tm - 1 < start and qr[start] > 0:
                slack = B
                rep.slack_applied.append(
                    f"interval starting at window start {slot(start)} with Q^r = {int(qr[start])}: -B slack")
            got, need = span(c_adm, lo, tp), span(c_hat, lo, tp)
            if got < need - slack:
                v.append(f"interval [{slot(lo)}, {slot(tp)}]: {got} < {need} (slack {slack}), node {partition.node}")
            if tp + 1 <= trace.length:
                if qf[tp + 1] >= qf[tp]:
                    rep.nondecreasing_type += 1
                else:
                    rep.decreasing_type += 1
            if slack:
                low_slack = B
            # stretch between this maximum and the next minimum
            if idx + 1 < len(rows):
                nxt = rows[idx + 1, 1]
                lo2, hi2 = tp + 1, nxt - 2
                if hi2 >= lo2 and span(c_drop, lo2, hi2) > 0:
                    v.append(f"drops between local max and min in [{slot(lo2)}, {slot(hi2)}], node {partition.node}")
            cursor = tp + 1
        if rows[-1, 2] != tkp:
            v.append(f"run [{slot(tk)}, {slot(tkp)}] not tiled by its intervals")
    if lhs < rhs - low_slack:
        v.append(f"low-slot bound: {lhs} < {rhs} (slack {low_slack}) on node {partition.node}")
    return rep


def verify_trace_lemmas(trace: Trace, gamma, buffer_size: int, delta_max: int, window=None) -> list[IntervalReport]:
    """Partition and verify every node of a trace over one window."""
    lower = lower_bound_admissions(trace, gamma, buffer_size, delta_max)
    out = []
    for n in range(1, trace.node_count + 1):
        part = partition_intervals(trace, n, lower.gamma, buffer_size, window)
        out.append(verify_interval_lemmas(trace, part, lower))
    return out


# ---------------------------------------------------------------------------
# non-decreasing segments

@dataclass(frozen=True, eq=False)
class SegmentTransform:
    a_f: np.ndarray          # adjusted fake arrivals
    a_f_adm: np.ndarray      # adjusted admitted fake arrivals
    b_f: np.ndarray          # zero
    q_real: np.ndarray
    q_fake: np.ndarray       # replayed, length L + 1


def transform_path_nondecreasing(q_real, q_fake, a_r, a_f, a_r_adm, b_r, b_f, buffer_size: int,
                                 delta_max: int, q_fake_after) -> SegmentTransform:
    """Canonical form of a single-node segment whose fake backlog never decreases.

    First caps fake services at the fake backlog, then moves them into the
    fake arrivals so that no fake service remains.  The result is replayed
    from the segment's first backlogs; the replay must reproduce the
    original backlog sequence exactly.
    """
    q_real, q_fake, a_r, a_f, a_r_adm, b_r, b_f = (np.asarray(x, np.int64) for x in
                                                    (q_real, q_fake, a_r, a_f, a_r_adm, b_r, b_f))
    if buffer_size < 2 * delta_max:
        raise PreconditionError("transform requires B >= 2 * delta_max")
    path = np.append(q_fake, np.int64(q_fake_after))
    if np.any(np.diff(path) < 0):
        raise PreconditionError("segment not non-decreasing")
    b_capped = np.minimum(q_fake, b_f)
    a_f_new = a_f - b_capped
    if np.any(a_f_new < 0):
        raise PreconditionError("negative adjusted fake arrivals; B >= 2 * delta_max is violated")
    drops = a_r - a_r_adm
    a_f_adm_new = a_f_new + drops
    b_f_new = np.zeros_like(b_f)
    qr = np.empty(len(q_real) + 1, np.int64)
    qf = np.empty(len(q_real) + 1, np.int64)
    qr[0], qf[0] = q_real[0], q_fake[0]
    for t in range(len(q_real)):
        qr[t + 1] = qr[t] - b_r[t] + a_r_adm[t]
        qf[t + 1] = max(qf[t] - b_f_new[t], 0) + a_f_adm_new[t]
    return SegmentTransform(a_f=a_f_new, a_f_adm=a_f_adm_new, b_f=b_f_new, q_real=qr, q_fake=qf)


def nondecreasing_segments(trace: Trace, node: int, min_length: int = 2) -> list[tuple[int, int]]:
    """Maximal slot ranges ``[lo, hi)`` at node ``node`` (1-based) with ``Q^f(t) <= Q^f(t+1)`` throughout."""
    qf = trace.q_fake_ext()[:, node - 1]
    ok = qf[1:] >= qf[:-1]
    edges = np.diff(np.concatenate([[0], ok.astype(np.int8), [0]]))
    los = np.flatnonzero(edges == 1)
    his = np.flatnonzero(edges == -1)
    return [(int(a), int(b)) for a, b in zip(los, his) if b - a >= min_length]


def transform_segment(trace: Trace, node: int, lo: int, hi: int, delta_max: int) -> tuple[SegmentTransform, bool]:
    """Transform slots ``[lo, hi)`` of one node and report whether the replay matches."""
    n = node - 1
    qf_ext = trace.q_fake_ext()[:, n]
    qr_ext = trace.q_real_ext()[:, n]
    sl = slice(lo, hi)
    res = transform_path_nondecreasing(trace.q_real[sl, n], trace.q_fake[sl, n], trace.a_r[sl, n],
                                       trace.a_f[sl, n], trace.a_r_adm[sl, n], trace.b_r[sl, n],
                                       trace.b_f[sl, n], trace.buffer_size, delta_max, qf_ext[hi])
    ok = np.array_equal(res.q_fake, qf_ext[lo:hi + 1]) and np.array_equal(res.q_real, qr_ext[lo:hi + 1])
    return res, bool(ok)


# ---------------------------------------------------------------------------
# metrics

@dataclass
class MetricsReport:
    slots: int
    burn_in: int
    buffer_size: int
    avg_cost: float                    # includes penalty_per_drop * drops
    avg_dpp_cost: float                # decisions' own cost f(t)
    avg_drops: np.ndarray              # real drops per slot, per node
    avg_real_arrivals: np.ndarray      # a_r
    avg_admitted: np.ndarray           # a_r'
    avg_arrivals: np.ndarray           # a = a_r + a_f
    avg_real_backlog: np.ndarray
    avg_backlog: np.ndarray
    per_hop_delay: np.ndarray          # B / a_r', inf when the admitted rate is zero
    delay_infinite: np.ndarray         # flags for the above
    occupancy_delay: np.ndarray        # mean Q^r / a_r'
    throughput: float                  # real packets leaving the network per slot
    max_total_backlog: int
    deviation_tail: list[tuple[int, float]] = field(default_factory=list)

    def as_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def _delays(buffer_size, admitted, real_backlog):
    with np.errstate(divide="ignore", invalid="ignore"):
        inf = admitted <= 0
        delay = np.where(inf, np.inf, buffer_size / np.where(inf, 1.0, admitted))
        occ = np.where(inf, np.inf, real_backlog / np.where(inf, 1.0, admitted))
    return delay, inf, occ


def tail_from_counts(counts: np.ndarray, slots: int) -> list[tuple[int, float]]:
    """``counts[r]`` = slots whose deviation exceeds ``r``."""
    return [(int(r), float(c) / slots) for r, c in enumerate(counts)]


def compute_metrics(trace: Trace, burn_in: int, buffer_size: int | None = None, gamma=None,
                    r_max: int | None = None, penalty_per_drop: float = 0.0,
                    scenario: Scenario | None = None) -> MetricsReport:
    """Time averages over trace slots ``[burn_in, T)``."""
    if trace.length <= burn_in:
        raise ValueError("trace length must exceed burn_in")
    B = trace.buffer_size if buffer_size is None else int(buffer_size)
    w = trace.segment(burn_in, trace.length)
    slots = w.length
    drops = w.drops.sum(axis=0) / slots
    admitted = w.a_r_adm.sum(axis=0) / slots
    real_backlog = w.q_real.mean(axis=0)
    delay, inf, occ = _delays(B, admitted, real_backlog)
    dpp = float(w.cost.mean())
    if w.exits is not None:
        exits = w.exits
    elif scenario is not None:
        exits = real_exits(w, scenario)
    else:
        exits = None
    tail = []
    if gamma is not None:
        g = np.asarray(getattr(gamma, "gamma", gamma), dtype=float)
        dev = np.abs(w.backlog - g).max(axis=1)
        radii = np.arange((B if r_max is None else r_max) + 1)
        counts = (dev[None, :] > radii[:, None]).sum(axis=1) if len(radii) * slots <= 5e7 else \
            np.array([(dev > r).sum() for r in radii])
        tail = tail_from_counts(counts, slots)
    return MetricsReport(
        slots=slots, burn_in=burn_in, buffer_size=B,
        avg_cost=dpp + penalty_per_drop * float(drops.sum()),
        avg_dpp_cost=dpp,
        avg_drops=drops,
        avg_real_arrivals=w.a_r.sum(axis=0) / slots,
        avg_admitted=admitted,
        avg_arrivals=(w.a_r + w.a_f).sum(axis=0) / slots,
        avg_real_backlog=real_backlog,
        avg_backlog=w.backlog.mean(axis=0),
        per_hop_delay=delay, delay_infinite=inf, occupancy_delay=occ,
        throughput=float(exits.sum()) / slots if exits is not None else float("nan"),
        max_total_backlog=int(w.backlog.sum(axis=1).max()),
        deviation_tail=tail,
    )
