import numpy as np
import pytest
from hypothesis import settings

from floatnet import build_line_network, load_scenario
from floatnet.model import NetworkState, Scenario, make_action

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def line_power():
    return load_scenario("line_power")


@pytest.fixture(scope="session")
def line_throughput():
    return load_scenario("line_throughput")


def single_state(actions, n=1, probability=1.0):
    """Scenario with one state; ``actions`` is a list of (cost, flows)."""
    acts = [make_action(k, c, n, flows) for k, (c, flows) in enumerate(actions)]
    return Scenario(node_count=n, states=[NetworkState(0, probability, acts)])


@pytest.fixture
def drain_example():
    # g(gamma) = min(V - gamma, 0)
    return single_state([(0.0, []), (1.0, [(1, 0, 1)])])


@pytest.fixture
def kink_example():
    # persistent unit arrival; idle (net +1) or drain two at cost 2 (net -1):
    # g(gamma) = min(2V - gamma, gamma), unique maximizer gamma = V
    return single_state([(0.0, [(0, 1, 1)]), (2.0, [(0, 1, 1), (1, 0, 2)])])
