"""Adaptive event-triggered consensus of linear multi-agent systems."""
from importlib import resources

from .config import ConfigError, ScenarioConfig, build_scenario, load_scenario, parse_scenario
from .graph import DirectedGraph, build_graph, classify
from .hybrid_sim import DivergenceError, Scenario, SimConfig, Trajectory, ZenoError, run
from .metrics import RunReport, compare_protocols, run_report, verify_invariants
from .synthesis import GainSet, SystemModel, solve_care, synthesize_gains

__version__ = "0.1.0"


def bundled_scenario(name: str = "six_agents.cfg"):
    """Path to a scenario shipped with the package."""
    return resources.files(__name__).joinpath("scenarios", name)
