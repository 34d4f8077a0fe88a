"""Compiled slot loop shared by ``sim.run`` and the acceptance harness.

The kernel mirrors ``controller.decide`` and ``queues.step_floating_network``
operation for operation; the pure-Python versions stay the reference and the
tests compare the two on recorded traces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import Scenario

MODES = {"standard": 0, "floating": 1, "both": 2}
CHUNK = 1 << 18

# rows of the per-node accumulator
ACC_DROPS, ACC_AR, ACC_AR_ADM, ACC_A, ACC_QR, ACC_Q, ACC_EXIT, ACC_BR = range(8)
# scalar counters
CNT_MAXQ, CNT_SUM_MISMATCH, CNT_DROP_FAKE, CNT_EXITS, CNT_MAXQ_STD, CNT_SLOTS = range(6)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 seeded through SeedSequence; the same seed gives the same stream on every platform."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def sample_states(rng: np.random.Generator, cdf: np.ndarray, size: int) -> np.ndarray:
    u = rng.random(size)
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1).astype(np.int64)


@njit(cache=True)
def _choose(lo, hi, q, costs, net, v):
    """Lowest-id minimizer of ``v*cost + q.net`` over flat actions ``lo..hi-1``."""
    best = lo
    best_w = np.inf
    n = q.shape[0]
    for k in range(lo, hi):
        dot = 0
        for i in range(n):
            dot += q[i] * net[k, i]
        w = v * costs[k] + float(dot)
        if w < best_w:
            best_w = w
            best = k
    return best


@njit(cache=True)
def _run_chunk(states, t_start, offsets, costs, net, arr, dep, services, v, buf, mode,
               q_std, q_real, q_fake, burn_in, gamma, track_dev, dev_hist,
               acc_cost, acc_n, counters,
               act_fl, act_std, rec_from, rec_state, rec_action, rec_cost, rec_exit,
               r_ar, r_af, r_ara, r_afa, r_br, r_bf, r_qr, r_qf):
    n = q_real.shape[0]
    q = np.empty(n, dtype=np.int64)
    br = np.empty(n, dtype=np.int64)
    bf = np.empty(n, dtype=np.int64)
    a_r = np.empty(n, dtype=np.int64)
    a_f = np.empty(n, dtype=np.int64)
    r_max = dev_hist.shape[0] - 2
    recording = rec_state.shape[0] > 0
    for s in range(states.shape[0]):
        t = t_start + s
        m = states[s]
        lo = offsets[m]
        hi = offsets[m + 1]
        window = t >= burn_in

        if mode != 0:
            for i in range(n):
                q[i] = q_real[i] + q_fake[i]
            k = _choose(lo, hi, q, costs, net, v)
            act_fl[s] = k - lo
            exits = 0
            for i in range(n):
                b = 0
                for j in range(n + 1):
                    b += services[k, i + 1, j]
                br[i] = min(q_real[i], b)
                bf[i] = b - br[i]
                a_r[i] = services[k, 0, i + 1]
                a_f[i] = 0
            for i in range(n):
                rem = br[i]
                for j in range(n + 1):
                    x = services[k, i + 1, j]
                    r = min(rem, x)
                    rem -= r
                    if j == 0:
                        exits += r
                        if window:
                            acc_n[ACC_EXIT, i] += r
                    else:
                        a_r[j - 1] += r
                        a_f[j - 1] += x - r
            if window:
                acc_cost[0] += costs[k]
                total = 0
                for i in range(n):
                    total += q[i]
                if total > counters[CNT_MAXQ]:
                    counters[CNT_MAXQ] = total
                counters[CNT_EXITS] += exits
                counters[CNT_SLOTS] += 1
                if track_dev:
                    dev = 0.0
                    for i in range(n):
                        d = abs(q[i] - gamma[i])
                        if d > dev:
                            dev = d
                    if dev > 0.0:
                        # slot counts toward every radius r < dev
                        idx = int(np.ceil(dev)) - 1
                        dev_hist[min(idx, r_max + 1)] += 1
            rec = recording and t >= rec_from
            row = t - rec_from
            if rec:
                rec_state[row] = m
                rec_action[row] = k - lo
                rec_cost[row] = costs[k]
                rec_exit[row] = exits
            for i in range(n):
                adm = min(buf - q_real[i], a_r[i])
                d = a_r[i] - adm
                afa = a_f[i] + d
                if rec:
                    r_ar[row, i] = a_r[i]
                    r_af[row, i] = a_f[i]
                    r_ara[row, i] = adm
                    r_afa[row, i] = afa
                    r_br[row, i] = br[i]
                    r_bf[row, i] = bf[i]
                    r_qr[row, i] = q_real[i]
                    r_qf[row, i] = q_fake[i]
                if window:
                    acc_n[ACC_DROPS, i] += d
                    acc_n[ACC_AR, i] += a_r[i]
                    acc_n[ACC_AR_ADM, i] += adm
                    acc_n[ACC_A, i] += a_r[i] + a_f[i]
                    acc_n[ACC_QR, i] += q_real[i]
                    acc_n[ACC_Q, i] += q[i]
                    acc_n[ACC_BR, i] += br[i]
                old_f = q_fake[i]
                q_real[i] = q_real[i] - br[i] + adm
                f = q_fake[i] - bf[i]
                q_fake[i] = (f if f > 0 else 0) + afa
                if d > 0 and q_fake[i] <= old_f:
                    counters[CNT_DROP_FAKE] += 1

        if mode != 1:
            k = _choose(lo, hi, q_std, costs, net, v)
            act_std[s] = k - lo
            if mode == 0:
                if window:
                    acc_cost[0] += costs[k]
                    counters[CNT_SLOTS] += 1
                    total = 0
                    dev = 0.0
                    for i in range(n):
                        total += q_std[i]
                        acc_n[ACC_Q, i] += q_std[i]
                        acc_n[ACC_A, i] += arr[k, i]
                        if track_dev:
                            d = abs(q_std[i] - gamma[i])
                            if d > dev:
                                dev = d
                    if total > counters[CNT_MAXQ]:
                        counters[CNT_MAXQ] = total
                    if track_dev and dev > 0.0:
                        idx = int(np.ceil(dev)) - 1
                        dev_hist[min(idx, r_max + 1)] += 1
            else:
                acc_cost[1] += costs[k] if window else 0.0
            total = 0
            for i in range(n):
                x = q_std[i] - dep[k, i]
                q_std[i] = (x if x > 0 else 0) + arr[k, i]
                total += q_std[i]
            if total > counters[CNT_MAXQ_STD]:
                counters[CNT_MAXQ_STD] = total

        if mode == 2:
            for i in range(n):
                if q_std[i] != q_real[i] + q_fake[i]:
                    counters[CNT_SUM_MISMATCH] += 1


@dataclass
class RawTrace:
    """Recorded slots ``[t0, t0 + len)``; backlogs are slot-start values."""

    t0: int
    state: np.ndarray
    action: np.ndarray
    cost: np.ndarray
    exits: np.ndarray
    a_r: np.ndarray
    a_f: np.ndarray
    a_r_adm: np.ndarray
    a_f_adm: np.ndarray
    b_r: np.ndarray
    b_f: np.ndarray
    q_real: np.ndarray
    q_fake: np.ndarray
    q_real_next: np.ndarray = None
    q_fake_next: np.ndarray = None


@dataclass
class SimOutput:
    slots: int                   # measured (post burn-in) slots
    cost_sum: float              # sum of f over the window, floating side (standard in standard mode)
    cost_sum_std: float          # standard side in mode=both
    acc: np.ndarray              # (8, N) per-node sums, rows ACC_*
    counters: np.ndarray
    dev_hist: np.ndarray | None
    q_std: np.ndarray
    q_real: np.ndarray
    q_fake: np.ndarray
    actions: np.ndarray | None = None
    standard_actions: np.ndarray | None = None
    trace: RawTrace | None = None


def simulate(scenario: Scenario, v_param: float, buffer_size: int, horizon: int, burn_in: int,
             seed: int, mode: str = "floating", fake_init=None, gamma=None, r_max: int = 0,
             record_from: int | None = None, keep_actions: bool = False,
             chunk: int = CHUNK) -> SimOutput:
    """Run ``horizon`` slots from ``Q^r = 0``, ``Q^f = fake_init`` (and ``Q = Q^f`` for the standard side)."""
    t = scenario.tables
    n = scenario.node_count
    mode_id = MODES[mode]
    cdf = np.cumsum(t.probs)
    cdf[-1] = 1.0
    rng = make_rng(seed)

    q_fake = np.zeros(n, np.int64) if fake_init is None else np.array(fake_init, dtype=np.int64)
    if q_fake.shape != (n,) or np.any(q_fake < 0):
        raise ValueError("fake_init must be a nonnegative vector of length N")
    q_real = np.zeros(n, np.int64)
    q_std = q_fake.copy()

    net = np.ascontiguousarray(t.net, dtype=np.int64)
    arr = np.ascontiguousarray(t.arrivals, dtype=np.int64)
    dep = np.ascontiguousarray(t.departures, dtype=np.int64)
    services = np.ascontiguousarray(t.services, dtype=np.int64)
    costs = np.ascontiguousarray(t.costs)
    offsets = np.ascontiguousarray(t.offsets)

    track_dev = gamma is not None
    gam = np.zeros(n) if gamma is None else np.asarray(gamma, dtype=float)
    dev_hist = np.zeros(r_max + 2, np.int64)
    acc_cost = np.zeros(2)
    acc_n = np.zeros((8, n), np.int64)
    counters = np.zeros(6, np.int64)

    rec_from = horizon if record_from is None else max(0, int(record_from))
    n_rec = horizon - rec_from
    rec_state = np.zeros(n_rec, np.int64)
    rec_action = np.zeros(n_rec, np.int64)
    rec_cost = np.zeros(n_rec)
    rec_exit = np.zeros(n_rec, np.int32)
    fields = [np.zeros((n_rec, n), np.int32) for _ in range(8)]

    acts_fl, acts_std = [], []
    for start in range(0, horizon, chunk):
        size = min(chunk, horizon - start)
        states = sample_states(rng, cdf, size)
        act_fl = np.full(size, -1, np.int64)
        act_std = np.full(size, -1, np.int64)
        _run_chunk(states, start, offsets, costs, net, arr, dep, services, float(v_param),
                   int(buffer_size), mode_id, q_std, q_real, q_fake, burn_in, gam, track_dev,
                   dev_hist, acc_cost, acc_n, counters, act_fl, act_std, rec_from, rec_state,
                   rec_action, rec_cost, rec_exit, *fields)
        if keep_actions:
            acts_fl.append(act_fl)
            acts_std.append(act_std)

    trace = None
    if n_rec > 0 and mode_id != 0:
        trace = RawTrace(rec_from, rec_state, rec_action, rec_cost, rec_exit, *fields,
                         q_real_next=q_real.copy(), q_fake_next=q_fake.copy())
    return SimOutput(
        slots=int(counters[CNT_SLOTS]),
        cost_sum=float(acc_cost[0]),
        cost_sum_std=float(acc_cost[1]),
        acc=acc_n,
        counters=counters,
        dev_hist=dev_hist if track_dev else None,
        q_std=q_std, q_real=q_real, q_fake=q_fake,
        actions=np.concatenate(acts_fl) if keep_actions and mode_id != 0 else None,
        standard_actions=np.concatenate(acts_std) if keep_actions and mode_id != 1 else None,
        trace=trace,
    )
