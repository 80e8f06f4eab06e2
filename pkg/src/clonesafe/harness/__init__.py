"""Scenario runner, uniqueness checker, benchmarks and the feature matrix."""

from .scenario import ParseError, Scenario, format_scenario, load_scenario, parse_scenario
from .uniqueness import Emission, UniquenessReport, check_uniqueness, logs_from_records

__all__ = ["ParseError", "Scenario", "format_scenario", "load_scenario", "parse_scenario",
           "Emission", "UniquenessReport", "check_uniqueness", "logs_from_records"]
