"""Built-in scenario generators: the 4-hop line network and random instances."""

from __future__ import annotations

import itertools

import numpy as np

from .model import NetworkState, Scenario, make_action

VARIANTS = ("power_min", "throughput_max")


def build_line_network(arrival_prob: float, good_prob: float, variant: str = "power_min",
                       n_links: int = 4) -> Scenario:
    """Line network ``0 -> 1 -> 2 -> ... -> n_links -> exit``.

    The network state is (exogenous arrival bit, channel of each link), with
    links independent and good with probability ``good_prob``.  State ids
    are ``arrival * 2**n_links + channel_mask`` where bit ``l`` of the mask
    is set when link ``l`` (out of node ``l+1``) is good.

    ``power_min``: the arrival is always admitted; actions are subsets of
    links to fire (action id = subset bitmask), costing 1 per good link and
    2 per bad link.

    ``throughput_max``: only good links can fire; when a packet arrives the
    controller may admit it at cost -1.  Action id = ``2 * subset + admit``
    over the good-link subsets.  Drops are charged 1 each.
    """
    if not (0.0 <= arrival_prob <= 1.0 and 0.0 <= good_prob <= 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    n = n_links
    links = [(l + 1, l + 2 if l + 1 < n else 0) for l in range(n)]
    states = []
    for arrival in (0, 1):
        p_arr = arrival_prob if arrival else 1.0 - arrival_prob
        for mask in range(2 ** n):
            good = [(mask >> l) & 1 for l in range(n)]
            p = p_arr
            for g in good:
                p *= good_prob if g else 1.0 - good_prob
            sid = arrival * 2 ** n + mask
            actions = []
            if variant == "power_min":
                for subset in range(2 ** n):
                    flows = [(0, 1, 1)] if arrival else []
                    cost = 0.0
                    for l in range(n):
                        if (subset >> l) & 1:
                            flows.append((*links[l], 1))
                            cost += 1.0 if good[l] else 2.0
                    actions.append(make_action(subset, cost, n, flows))
            else:
                for subset in range(2 ** n):
                    if subset & ~mask:
                        continue
                    for admit in ((0, 1) if arrival else (0,)):
                        flows = [(0, 1, 1)] if admit else []
                        flows += [(*links[l], 1) for l in range(n) if (subset >> l) & 1]
                        actions.append(make_action(len(actions), -float(admit), n, flows))
            states.append(NetworkState(id=sid, probability=p, actions=actions))
    kappa = 1.0 if variant == "throughput_max" else 0.0
    return Scenario(node_count=n, states=states, penalty_per_drop=kappa,
                    name=f"line_{'power' if variant == 'power_min' else 'throughput'}")


def random_scenario(rng: np.random.Generator, node_count: int = 3, n_states: int = 4,
                    n_actions: int = 4, max_flow: int = 2, arrival_prob: float = 0.5) -> Scenario:
    """Random instance for property and oracle tests.

    Each state carries forced exogenous arrivals present in every action;
    action 0 is idle (arrivals only, cost 0) and the others add random
    routing flows with random costs.  Every service matrix has a zero
    diagonal and integer entries in ``[0, max_flow]``.
    """
    n = node_count
    raw = rng.random(n_states) + 0.05
    probs = raw / raw.sum()
    probs[-1] = 1.0 - probs[:-1].sum()
    pairs = [(i, j) for i, j in itertools.product(range(n + 1), repeat=2) if i != j and i != 0]
    states = []
    for m in range(n_states):
        exo = [(0, j, int(rng.integers(1, max_flow + 1)))
               for j in range(1, n + 1) if rng.random() < arrival_prob]
        actions = [make_action(0, 0.0, n, exo)]
        for k in range(1, n_actions):
            n_links = int(rng.integers(1, len(pairs) + 1))
            pick = rng.choice(len(pairs), size=n_links, replace=False)
            flows = exo + [(*pairs[p], int(rng.integers(1, max_flow + 1))) for p in pick]
            cost = float(np.round(rng.uniform(0.0, 3.0), 3))
            actions.append(make_action(k, cost, n, flows))
        states.append(NetworkState(id=m, probability=float(probs[m]), actions=actions))
    return Scenario(node_count=n, states=states, name="random")
