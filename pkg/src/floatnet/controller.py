"""Drift-plus-penalty decision rule.

Each slot the controller picks, from the current state's finite action list,
the action minimizing ``V * cost + sum_n Q_n * (a_n - b_n)``.  With ``V = 0``
this is MaxWeight / backpressure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ActionSpec, NetworkState


@dataclass(frozen=True)
class ControllerConfig:
    v_param: float
    tie_break: str = "lowest_action_id"

    def __post_init__(self):
        if not self.v_param >= 0:
            raise ValueError(f"v_param must be >= 0, got {self.v_param}")
        if self.tie_break != "lowest_action_id":
            raise ValueError(f"unsupported tie_break {self.tie_break!r}")


@dataclass(frozen=True, eq=False)
class Decision:
    action_id: int
    objective_value: float
    arrivals: np.ndarray      # a_n
    departures: np.ndarray    # b_n
    services: np.ndarray      # full mu matrix


def dpp_weight(action: ActionSpec, backlog, config: ControllerConfig) -> float:
    q = np.asarray(backlog, dtype=np.int64)
    net = action.arrivals.astype(np.int64) - action.departures.astype(np.int64)
    if q.shape != net.shape:
        raise ValueError(f"backlog has length {q.size}, expected {net.size}")
    # integer part first so the float result matches the simulation kernel bit for bit
    return config.v_param * action.cost + float(int(q @ net))


def decide(state: NetworkState, backlog, config: ControllerConfig) -> Decision:
    if not state.actions:
        raise ValueError("no feasible action")
    best = None
    best_w = np.inf
    for action in state.actions:
        w = dpp_weight(action, backlog, config)
        if best is None or w < best_w:
            best, best_w = action, w
    return Decision(
        action_id=best.id,
        objective_value=best_w,
        arrivals=best.arrivals,
        departures=best.departures,
        services=best.services,
    )
