"""Drift-plus-penalty network control with floating finite-buffer queues."""

from .controller import ControllerConfig, Decision, decide, dpp_weight
from .dual import DualConfig, DualSolution, brute_force_dual, dual_subgradient, dual_value, solve_dual
from .model import (ActionSpec, NetworkState, Scenario, ScenarioError, check_slater,
                    compute_delta_max, load_scenario, save_scenario, validate_scenario)
from .scenarios import build_line_network, random_scenario

__version__ = "0.1.0"
