"""Scenario configuration, offline/online orchestration, metrics and the command line."""

from .config import ConfigError, Scenario, load_scenario, scenario_from_dict
from .scenario import Build, build_system, chain_scenario, place_blocks

__all__ = ["Build", "ConfigError", "Scenario", "build_system", "chain_scenario", "load_scenario", "place_blocks",
           "scenario_from_dict"]
