import numpy as np
import pytest
from hypothesis import given, strategies as st

from floatnet import random_scenario
from floatnet.controller import ControllerConfig, decide, dpp_weight
from floatnet.model import ActionSpec, NetworkState, make_action


def _line_action(cost, flows):
    return make_action(0, cost, 4, flows)


def test_weight_zero_v_zero_backlog():
    a = _line_action(5.0, [(1, 2, 1)])
    assert dpp_weight(a, [0, 0, 0, 0], ControllerConfig(0.0)) == 0.0


def test_weight_single_link_example():
    a = _line_action(1.0, [(1, 2, 1)])
    assert dpp_weight(a, [50, 10, 0, 0], ControllerConfig(200.0)) == 160.0


def test_weight_idle_is_zero():
    assert dpp_weight(_line_action(0.0, []), [7, 3, 9, 1], ControllerConfig(200.0)) == 0.0


def test_weight_rejects_wrong_length():
    with pytest.raises(ValueError):
        dpp_weight(_line_action(0.0, []), [1, 2], ControllerConfig(1.0))


def test_negative_v_rejected():
    with pytest.raises(ValueError):
        ControllerConfig(-1.0)


def _idle_transmit(cost=1.0):
    return NetworkState(0, 1.0, [make_action(0, 0.0, 4, []), make_action(1, cost, 4, [(1, 2, 1)])])


def test_maxweight_transmits():
    d = decide(_idle_transmit(), [10, 0, 0, 0], ControllerConfig(0.0))
    assert d.action_id == 1 and d.objective_value == -10.0
    assert d.departures[0] == 1 and d.arrivals[1] == 1


def test_tie_goes_to_lowest_id():
    state = NetworkState(0, 1.0, [make_action(0, 1.0, 1, [(1, 0, 1)]), make_action(1, 1.0, 1, [(1, 0, 1)])])
    assert decide(state, [3], ControllerConfig(2.0)).action_id == 0
    # idle weight 0 against 200 - 200 = 0
    assert decide(_idle_transmit(), [200, 0, 0, 0], ControllerConfig(200.0)).action_id == 0


@pytest.mark.parametrize("q1, expected", [(199, 0), (200, 0), (201, 1), (500, 1)])
def test_power_threshold(q1, expected):
    assert decide(_idle_transmit(), [q1, 0, 0, 0], ControllerConfig(200.0)).action_id == expected


def test_empty_action_set():
    with pytest.raises(ValueError, match="no feasible action"):
        decide(NetworkState(0, 1.0, []), [0], ControllerConfig(1.0))


def _state(seed):
    s = random_scenario(np.random.default_rng(seed), node_count=3, n_states=1, n_actions=5)
    return s.states[0]


@given(st.integers(0, 2 ** 32 - 1), st.lists(st.integers(0, 500), min_size=3, max_size=3),
       st.integers(1, 7), st.integers(0, 300))
def test_scale_invariance(seed, q, c, v):
    # integer costs keep every weight exact, so ties survive the scaling too
    state = _state(seed)
    base_state = NetworkState(0, 1.0, [ActionSpec(a.id, float(round(a.cost)), a.services) for a in state.actions])
    scaled = NetworkState(0, 1.0, [ActionSpec(a.id, a.cost * c, a.services) for a in base_state.actions])
    base = decide(base_state, q, ControllerConfig(v))
    other = decide(scaled, [c * x for x in q], ControllerConfig(v))
    assert other.action_id == base.action_id
    assert other.objective_value == c * base.objective_value


@given(st.integers(0, 2 ** 32 - 1), st.lists(st.integers(0, 500), min_size=3, max_size=3), st.floats(0, 300))
def test_decide_deterministic_and_exact(seed, q, v):
    state = _state(seed)
    cfg = ControllerConfig(v)
    d1, d2 = decide(state, q, cfg), decide(state, q, cfg)
    assert d1.action_id == d2.action_id and d1.objective_value == d2.objective_value
    chosen = state.actions[d1.action_id]
    net = chosen.arrivals - chosen.departures
    assert d1.objective_value == v * chosen.cost + float(int(np.dot(q, net)))
    assert all(d1.objective_value <= dpp_weight(a, q, cfg) for a in state.actions)


@given(st.integers(1, 10 ** 6), st.integers(1, 3), st.integers(0, 3))
def test_maxweight_never_strictly_prefers_idle(q1, amount, n_extra):
    flows = [(1, 0, amount)]
    acts = [make_action(0, 0.0, 1, [])] + [make_action(k + 1, float(k), 1, flows) for k in range(n_extra + 1)]
    d = decide(NetworkState(0, 1.0, acts), [q1], ControllerConfig(0.0))
    assert d.objective_value <= dpp_weight(acts[0], [q1], ControllerConfig(0.0))
    assert d.action_id != 0
