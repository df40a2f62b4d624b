"""Phasor-domain simulation of microgrids coupled through back-to-back converters."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .btb import BtbConverter, DcLinkState, precharge
from .devices import DieselGen, GflInverter, GfmInverter
from .engine import Event, RunResult, SimConfig, Simulation, TimeSeriesRecord, run
from .netmodel import NetworkModel, PhasorSolver, assemble_admittance
from .scenario import CASES, ScenarioDoc, ScenarioError, build_simulation, builtin_case, load_scenario, parse_scenario

__all__ = ["BtbConverter", "DcLinkState", "precharge", "DieselGen", "GflInverter", "GfmInverter", "Event",
           "RunResult", "SimConfig", "Simulation", "TimeSeriesRecord", "run", "NetworkModel", "PhasorSolver",
           "assemble_admittance", "CASES", "ScenarioDoc", "ScenarioError", "build_simulation", "builtin_case",
           "load_scenario", "parse_scenario"]
