"""Network instances: random states, finite action sets, costs and service matrices.

Service matrices are ``(N+1) x (N+1)`` integer arrays indexed by node, where
index 0 stands for the exogenous source (row 0) and the network exit
(column 0).  Internal queues are numbered ``1..N``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np
from scipy.optimize import linprog

PROBABILITY_TOL = 1e-12
LP_MAX_VARS = 50_000       # larger scenarios use the subgradient estimate


class ScenarioError(ValueError):
    """Raised when a scenario file cannot be parsed or fails validation."""


@dataclass(frozen=True, eq=False)
class ActionSpec:
    id: int
    cost: float
    services: np.ndarray

    def __post_init__(self):
        mu = np.array(self.services, copy=True)
        mu.setflags(write=False)
        object.__setattr__(self, "services", mu)

    @property
    def arrivals(self) -> np.ndarray:
        """Aggregated arrivals a_n = sum_i mu_in for n = 1..N."""
        return self.services[:, 1:].sum(axis=0)

    @property
    def departures(self) -> np.ndarray:
        """Aggregated services b_n = sum_j mu_nj for n = 1..N."""
        return self.services[1:, :].sum(axis=1)


@dataclass(frozen=True, eq=False)
class NetworkState:
    id: int
    probability: float
    actions: tuple[ActionSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))


@dataclass(frozen=True)
class ScenarioTables:
    """Flattened, padded numeric view of a scenario used by the hot loops."""

    probs: np.ndarray         # (M,)
    offsets: np.ndarray       # (M+1,) start of each state's actions in the flat arrays
    costs: np.ndarray         # (K,)
    arrivals: np.ndarray      # (K, N) int64
    departures: np.ndarray    # (K, N) int64
    services: np.ndarray      # (K, N+1, N+1) int64
    cost_pad: np.ndarray      # (M, Kmax), 0 in padding
    pad_penalty: np.ndarray   # (M, Kmax), 0 for real actions and +inf in padding
    net_pad: np.ndarray       # (M, Kmax, N) arrivals minus departures, 0 in padding
    counts: np.ndarray        # (M,) actions per state

    @property
    def net(self) -> np.ndarray:
        return self.arrivals - self.departures


@dataclass(frozen=True, eq=False)
class Scenario:
    node_count: int
    states: tuple[NetworkState, ...]
    penalty_per_drop: float = 0.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([s.probability for s in self.states], dtype=float)

    @cached_property
    def tables(self) -> ScenarioTables:
        n = self.node_count
        counts = np.array([len(s.actions) for s in self.states], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        actions = [a for s in self.states for a in s.actions]
        services = np.zeros((len(actions), n + 1, n + 1), dtype=np.int64)
        for k, a in enumerate(actions):
            services[k] = np.asarray(a.services, dtype=np.int64)
        costs = np.array([a.cost for a in actions], dtype=float)
        arrivals = services[:, :, 1:].sum(axis=1)
        departures = services[:, 1:, :].sum(axis=2)
        kmax = int(counts.max()) if len(counts) else 0
        cost_pad = np.zeros((len(self.states), kmax))
        pad_penalty = np.full((len(self.states), kmax), np.inf)
        net_pad = np.zeros((len(self.states), kmax, n), dtype=np.int64)
        for m in range(len(self.states)):
            lo, hi = offsets[m], offsets[m + 1]
            cost_pad[m, : hi - lo] = costs[lo:hi]
            pad_penalty[m, : hi - lo] = 0.0
            net_pad[m, : hi - lo] = arrivals[lo:hi] - departures[lo:hi]
        tables = ScenarioTables(
            probs=self.probabilities,
            offsets=offsets,
            costs=costs,
            arrivals=arrivals,
            departures=departures,
            services=services,
            cost_pad=cost_pad,
            pad_penalty=pad_penalty,
            net_pad=net_pad,
            counts=counts,
        )
        for arr in (tables.probs, tables.offsets, tables.costs, tables.arrivals,
                    tables.departures, tables.services, tables.cost_pad,
                    tables.pad_penalty, tables.net_pad, tables.counts):
            arr.setflags(write=False)
        return tables


@dataclass(frozen=True)
class ScenarioBounds:
    delta_max: int


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class SlaterEstimate:
    eta: float
    policy: list[np.ndarray]
    method: str

    @property
    def plausible(self) -> bool:
        return self.eta > 0


def make_action(id: int, cost: float, node_count: int,
                flows: Sequence[tuple[int, int, int]]) -> ActionSpec:
    """Build an action from ``(i, j, amount)`` triples; repeated links add up."""
    mu = np.zeros((node_count + 1, node_count + 1), dtype=np.int64)
    for i, j, amount in flows:
        mu[i, j] += amount
    return ActionSpec(id=id, cost=float(cost), services=mu)


def validate_scenario(scenario: Scenario) -> ValidationReport:
    report = ValidationReport()
    v = report.violations
    n = scenario.node_count
    if not isinstance(n, (int, np.integer)) or n < 1:
        v.append(f"node_count must be a positive integer, got {n!r}")
        return report
    if not scenario.states:
        v.append("scenario has no states")
        return report
    if not (scenario.penalty_per_drop >= 0 and math.isfinite(scenario.penalty_per_drop)):
        v.append(f"penalty_per_drop must be a finite nonnegative number, got {scenario.penalty_per_drop}")

    total = 0.0
    for m, state in enumerate(scenario.states):
        p = state.probability
        if not (0.0 <= p <= 1.0):
            v.append(f"state {m}: probability {p} outside [0, 1]")
        total += p
        if state.id != m:
            v.append(f"state {m}: id {state.id} must equal its position")
        if not state.actions:
            v.append(f"state {m}: empty action set")
        for k, action in enumerate(state.actions):
            where = f"state {m}, action {k}"
            if action.id != k:
                v.append(f"{where}: id {action.id} must equal its position")
            mu = np.asarray(action.services)
            if mu.shape != (n + 1, n + 1):
                v.append(f"{where}: services shape {mu.shape}, expected {(n + 1, n + 1)}")
                continue
            if not math.isfinite(action.cost):
                v.append(f"{where}: cost must be finite")
            if not np.all(np.isfinite(mu.astype(float))):
                v.append(f"{where}: services must be finite")
                continue
            if np.any(mu != np.round(mu)):
                v.append(f"{where}: services must be integers")
            if np.any(mu < 0):
                v.append(f"{where}: services must be nonnegative")
            diag = np.flatnonzero(np.diag(mu))
            for i in diag:
                v.append(f"{where}: self-service must be zero (mu_{i}{i} = {mu[i, i]})")
    if abs(total - 1.0) > PROBABILITY_TOL:
        v.append(f"probabilities sum to {total:.12g}")
    return report


def compute_delta_max(scenario: Scenario) -> ScenarioBounds:
    t = scenario.tables
    bound = 0
    if len(t.costs):
        bound = int(max(t.arrivals.max(), t.departures.max()))
    # an all-zero scenario would give a zero buffer threshold
    return ScenarioBounds(delta_max=max(1, bound))


def check_slater(scenario: Scenario, trials: int = 10_000) -> SlaterEstimate:
    """Best-effort estimate of the Slater slack of a scenario.

    Maximizes ``eta`` such that some stationary randomized policy has expected
    net arrivals ``<= -eta`` at every node.  Desk-scale instances are solved
    exactly as a linear program over the per-state action mixtures; larger
    ones fall back to ``trials`` iterations of projected subgradient descent on
    the dual over node weights, with the primal policy recovered by averaging.
    A positive ``eta`` means the condition plausibly holds.
    """
    t = scenario.tables
    probs, offsets, net = t.probs, t.offsets, t.net
    n_vars = len(t.costs)
    n = scenario.node_count
    if n_vars <= LP_MAX_VARS:
        # variables: zeta (K) then eta; minimize -eta
        c = np.zeros(n_vars + 1)
        c[-1] = -1.0
        weights = np.repeat(probs, t.counts)[:, None] * net          # (K, N)
        a_ub = np.hstack([weights.T, np.ones((n, 1))])
        b_ub = np.zeros(n)
        a_eq = np.zeros((len(probs), n_vars + 1))
        for m in range(len(probs)):
            a_eq[m, offsets[m]:offsets[m + 1]] = 1.0
        bounds = [(0, None)] * n_vars + [(None, None)]
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=np.ones(len(probs)),
                      bounds=bounds, method="highs")
        if not res.success:
            raise RuntimeError(f"Slater LP failed: {res.message}")
        zeta = res.x[:-1]
        policy = [zeta[offsets[m]:offsets[m + 1]].clip(0) for m in range(len(probs))]
        policy = [p / p.sum() for p in policy]
        return SlaterEstimate(eta=_policy_slack(policy, scenario), policy=policy, method="lp")

    # min over simplex lam of sum_m pi_m max_k (-lam . net_mk)
    lam = np.full(n, 1.0 / n)
    counts = np.zeros(n_vars)
    for it in range(1, trials + 1):
        vals = -(t.net_pad @ lam) - t.pad_penalty
        best = np.argmax(vals, axis=1)
        counts[offsets[:-1] + best] += 1
        sub = -np.einsum("m,mn->n", probs, t.net_pad[np.arange(len(probs)), best])
        lam = _project_simplex(lam - sub / math.sqrt(it))
    policy = [counts[offsets[m]:offsets[m + 1]] / trials for m in range(len(probs))]
    return SlaterEstimate(eta=_policy_slack(policy, scenario), policy=policy, method="subgradient")


def _policy_slack(policy: list[np.ndarray], scenario: Scenario) -> float:
    t = scenario.tables
    expected = np.zeros(scenario.node_count)
    for m, zeta in enumerate(policy):
        lo, hi = t.offsets[m], t.offsets[m + 1]
        expected += t.probs[m] * (zeta @ t.net[lo:hi])
    return float(-expected.max())


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


# ---------------------------------------------------------------------------
# config files

def _schema() -> dict:
    text = resources.files("floatnet").joinpath("data/scenario.schema.json").read_text()
    return json.loads(text)


def scenario_from_dict(doc: dict) -> Scenario:
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ScenarioError(f"{e.json_path}: {e.message}")
    n = doc["nodes"]
    states = []
    for m, st in enumerate(doc["states"]):
        actions = []
        for k, act in enumerate(st["actions"]):
            mu = np.zeros((n + 1, n + 1), dtype=float)
            for idx, (i, j, amount) in enumerate(act["services"]):
                if not (0 <= i <= n and 0 <= j <= n):
                    raise ScenarioError(
                        f"$.states[{m}].actions[{k}].services[{idx}]: node index out of range 0..{n}")
                mu[i, j] += amount
            if np.all(mu == np.round(mu)):
                mu = mu.astype(np.int64)
            actions.append(ActionSpec(id=k, cost=float(act["cost"]), services=mu))
        states.append(NetworkState(id=m, probability=float(st["probability"]), actions=actions))
    return Scenario(node_count=n, states=states,
                    penalty_per_drop=float(doc.get("penalty_per_drop", 0.0)),
                    name=doc.get("name", ""))


def scenario_to_dict(scenario: Scenario) -> dict:
    states = []
    for state in scenario.states:
        actions = []
        for a in state.actions:
            mu = np.asarray(a.services)
            flows = [[int(i), int(j), _plain(mu[i, j])] for i, j in zip(*np.nonzero(mu))]
            actions.append({"cost": float(a.cost), "services": flows})
        states.append({"probability": float(state.probability), "actions": actions})
    doc = {"nodes": scenario.node_count, "penalty_per_drop": float(scenario.penalty_per_drop),
           "states": states}
    if scenario.name:
        doc["name"] = scenario.name
    return doc


def _plain(x):
    x = float(x)
    return int(x) if x.is_integer() else x


def load_scenario(path: str | Path, validate: bool = True) -> Scenario:
    """Load a scenario file, or a built-in one by name (``line_power``, ``line_throughput``)."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and resources.files("floatnet").joinpath(f"data/{p.name}.json").is_file():
        text = resources.files("floatnet").joinpath(f"data/{p.name}.json").read_text()
    else:
        try:
            text = p.read_text()
        except OSError as exc:
            raise ScenarioError(f"{path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    scenario = scenario_from_dict(doc)
    if validate:
        report = validate_scenario(scenario)
        if not report.ok:
            raise ScenarioError(f"{path}: " + "; ".join(report.violations))
    return scenario


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=1) + "\n")
