"""Deterministic dual problem: dual function, subgradients, and two solvers.

``g(gamma) = sum_m pi_m min_k { V f_mk + gamma . (a_mk - b_mk) }`` is concave
and piecewise linear in ``gamma``.  ``solve_dual`` maximizes it over
``gamma >= 0`` by projected subgradient ascent; ``brute_force_dual`` is an
independent lattice search used as an oracle on small instances.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .model import Scenario, compute_delta_max


@dataclass
class DualSolution:
    gamma: np.ndarray
    dual_value: float
    iterations: int
    residual: float
    converged: bool = True
    method: str = "subgradient"


@dataclass
class DualConfig:
    step0: float | None = None        # default V * delta_max
    max_iters: int = 1_000_000
    tolerance: float | None = None    # default 1e-3 * max(1, V)
    check_every: int = 2_000          # must be even
    gamma0: np.ndarray | None = None


@dataclass
class RandomizedPolicy:
    """Per-state probability vectors over that state's actions."""

    probs: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.probs = [np.asarray(p, dtype=float) for p in self.probs]
        for m, p in enumerate(self.probs):
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"state {m}: policy is not a probability vector")

    def expected_net(self, scenario: Scenario) -> np.ndarray:
        t = scenario.tables
        out = np.zeros(scenario.node_count)
        for m, p in enumerate(self.probs):
            out += t.probs[m] * (p @ t.net[t.offsets[m]:t.offsets[m + 1]])
        return out

    def expected_cost(self, scenario: Scenario) -> float:
        t = scenario.tables
        return float(sum(t.probs[m] * (p @ t.costs[t.offsets[m]:t.offsets[m + 1]])
                         for m, p in enumerate(self.probs)))

    def primal_value(self, v_param: float, scenario: Scenario) -> float:
        """Objective of the deterministic problem, ``V * E[f]``."""
        return v_param * self.expected_cost(scenario)

    def feasible(self, scenario: Scenario, tol: float = 1e-12) -> bool:
        return bool(np.all(self.expected_net(scenario) <= tol))


def _inner(gamma: np.ndarray, v_param: float, scenario: Scenario) -> np.ndarray:
    """Per-state inner objective for each action, shape ``gamma.shape[:-1] + (M, Kmax)``."""
    t = scenario.tables
    return v_param * t.cost_pad + t.pad_penalty + np.einsum("mkn,...n->...mk", t.net_pad, gamma)


def dual_value(gamma, v_param: float, scenario: Scenario) -> tuple[float, np.ndarray]:
    """Dual function value and the per-state minimizing action ids (lowest id on ties)."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (scenario.node_count,):
        raise ValueError(f"gamma must have length {scenario.node_count}")
    if np.any(gamma < 0):
        raise ValueError("gamma must be nonnegative")
    inner = _inner(gamma, v_param, scenario)
    best = np.argmin(inner, axis=1)
    vals = inner[np.arange(inner.shape[0]), best]
    return float(scenario.tables.probs @ vals), best


def dual_values(gammas, v_param: float, scenario: Scenario) -> np.ndarray:
    """Vectorized ``g`` over a batch of multiplier vectors of shape ``(G, N)``."""
    gammas = np.atleast_2d(np.asarray(gammas, dtype=float))
    inner = _inner(gammas, v_param, scenario)
    return inner.min(axis=2) @ scenario.tables.probs


def dual_subgradient(gamma, v_param: float, scenario: Scenario) -> np.ndarray:
    """Expected arrivals minus services under the per-state minimizers."""
    _, best = dual_value(gamma, v_param, scenario)
    t = scenario.tables
    return t.probs @ t.net_pad[np.arange(len(best)), best]


@njit(cache=True)
def _ascent_block(cost_term, net_pad, probs, gamma, it0, n_iters, step0, best_gamma, best_val):
    """Run ``n_iters`` projected subgradient steps; returns the sum of the iterates.

    ``best_gamma`` / ``best_val[0]`` keep the highest-valued iterate seen so far.
    """
    m_count, k_max, n = net_pad.shape
    total = np.zeros(n)
    sub = np.empty(n)
    for s in range(n_iters):
        sub[:] = 0.0
        val = 0.0
        for m in range(m_count):
            best = 0
            best_w = np.inf
            for k in range(k_max):
                w = cost_term[m, k]
                for i in range(n):
                    w += net_pad[m, k, i] * gamma[i]
                if w < best_w:
                    best_w = w
                    best = k
            val += probs[m] * best_w
            for i in range(n):
                sub[i] += probs[m] * net_pad[m, best, i]
        if val > best_val[0]:
            best_val[0] = val
            best_gamma[:] = gamma
        alpha = step0 / np.sqrt(it0 + s)
        for i in range(n):
            g = gamma[i] + alpha * sub[i]
            gamma[i] = g if g > 0.0 else 0.0
            total[i] += gamma[i]
    return total


def solve_dual(v_param: float, scenario: Scenario, config: DualConfig | None = None) -> DualSolution:
    """Projected subgradient ascent with step ``alpha_0 / sqrt(t)``.

    The candidate answer is the average of the iterates over the last half of
    the run.  The residual is the sup-norm distance between that average now
    and at half the current iteration count; the run stops once it drops below
    the tolerance.  The returned point is the average or the best single
    iterate, whichever has the higher dual value.
    """
    cfg = config or DualConfig()
    if cfg.check_every < 2 or cfg.check_every % 2:
        raise ValueError("check_every must be a positive even number")
    t = scenario.tables
    n = scenario.node_count
    delta = compute_delta_max(scenario).delta_max
    step0 = cfg.step0 if cfg.step0 is not None else max(v_param, 1.0) * delta
    tol = cfg.tolerance if cfg.tolerance is not None else 1e-3 * max(1.0, v_param)
    gamma = np.zeros(n) if cfg.gamma0 is None else np.maximum(np.asarray(cfg.gamma0, float), 0)

    cost_term = v_param * t.cost_pad + t.pad_penalty
    net_pad = np.ascontiguousarray(t.net_pad, dtype=float)
    half = cfg.check_every // 2
    best_gamma = gamma.copy()
    best_val = np.array([-np.inf])
    blocks = []        # sums of iterates over consecutive blocks of `half` steps
    history = {}       # block count -> last-half average at that point
    residual = math.inf
    converged = False
    it = 0
    avg = gamma.copy()
    while it < cfg.max_iters:
        steps = min(half, cfg.max_iters - it)
        blocks.append(_ascent_block(cost_term, net_pad, t.probs, gamma, it + 1, steps, step0,
                                    best_gamma, best_val))
        it += steps
        k = len(blocks)
        if k % 2 == 0 or it == cfg.max_iters:
            # last half of the run, rounded to whole blocks
            lo = k // 2
            avg = np.sum(blocks[lo:], axis=0) / (it - lo * half)
            history[k] = avg
            earlier = history.get(2 * (k // 4))
            if earlier is not None and k >= 8:
                residual = float(np.max(np.abs(avg - earlier)))
                if residual < tol:
                    converged = True
                    break
    if not converged:
        warnings.warn(f"solve_dual stopped at max_iters={cfg.max_iters} with residual {residual:.3g}",
                      RuntimeWarning, stacklevel=2)
    value, _ = dual_value(avg, v_param, scenario)
    best_value, _ = dual_value(best_gamma, v_param, scenario)
    if best_value > value:
        avg, value = best_gamma.copy(), best_value
    return DualSolution(gamma=avg, dual_value=value, iterations=it, residual=residual,
                        converged=converged, method="subgradient")


def brute_force_dual(v_param: float, scenario: Scenario, grid_step: float = 0.25,
                     grid_max: float | None = None) -> DualSolution:
    """Lattice maximization of the dual function on ``{0, step, ..., grid_max}^N``.

    One or two nodes: every lattice point is evaluated (when the grid has at
    most 4e6 points).  Otherwise, up to four nodes: coarse-to-fine pattern
    search that maximizes exactly along every direction in ``{-1, 0, 1}^N``
    through the incumbent, halving the lattice spacing down to ``grid_step``.
    """
    n = scenario.node_count
    if n > 4:
        raise ValueError("oracle limited to desk scale")
    if grid_max is None:
        delta = compute_delta_max(scenario).delta_max
        grid_max = 2.0 * max(v_param, 1.0) * max(1.0, np.abs(scenario.tables.costs).max()) * delta * n
    n_pts = int(math.floor(grid_max / grid_step + 1e-9)) + 1
    if n <= 2 and n_pts ** n <= 4_000_000:
        axis = np.arange(n_pts) * grid_step
        grid = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
        best_val, best_pt = -math.inf, None
        for lo in range(0, len(grid), 50_000):
            vals = dual_values(grid[lo:lo + 50_000], v_param, scenario)
            i = int(np.argmax(vals))
            if vals[i] > best_val:
                best_val, best_pt = float(vals[i]), grid[lo + i]
        return DualSolution(gamma=best_pt.copy(), dual_value=best_val, iterations=len(grid),
                            residual=grid_step, method="grid")
    return _pattern_search(v_param, scenario, grid_step, grid_max)


def _pattern_search(v_param, scenario, grid_step, grid_max) -> DualSolution:
    n = scenario.node_count
    directions = [np.array(d, dtype=float) for d in itertools.product((-1, 0, 1), repeat=n)
                  if any(d) and next(x for x in d if x) > 0]
    levels = max(0, int(math.floor(math.log2(max(grid_max / grid_step / 64.0, 1.0)))))
    h = grid_step * 2 ** levels
    point = np.zeros(n)
    value = float(dual_values(point, v_param, scenario)[0])
    evals = 1
    coarsest = True
    while True:
        improved = True
        while improved:
            improved = False
            for d in directions:
                s_lo, s_hi = _line_range(point, d, h, grid_max)
                if not coarsest:
                    s_lo, s_hi = max(s_lo, -64), min(s_hi, 64)
                if s_lo >= s_hi:
                    continue
                steps = np.arange(s_lo, s_hi + 1)
                cand = point + np.outer(steps * h, d)
                vals = dual_values(cand, v_param, scenario)
                evals += len(cand)
                i = int(np.argmax(vals))
                if vals[i] > value + 1e-12:
                    point, value = cand[i], float(vals[i])
                    improved = True
        if h <= grid_step * (1 + 1e-12):
            break
        h /= 2.0
        coarsest = False
    return DualSolution(gamma=point, dual_value=value, iterations=evals, residual=grid_step,
                        method="pattern")


def _line_range(point, d, h, grid_max):
    """Integer step range ``s`` keeping ``point + s*h*d`` inside ``[0, grid_max]^N``."""
    lo, hi = -math.inf, math.inf
    for x, di in zip(point, d):
        if di > 0:
            lo = max(lo, math.ceil((-x) / h - 1e-9))
            hi = min(hi, math.floor((grid_max - x) / h + 1e-9))
        elif di < 0:
            lo = max(lo, math.ceil((x - grid_max) / h - 1e-9))
            hi = min(hi, math.floor(x / h + 1e-9))
    return int(lo), int(hi)
