from .network import Simulation, run
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario

__all__ = ["Simulation", "run", "Scenario", "ScenarioError", "load_scenario", "parse_scenario"]
