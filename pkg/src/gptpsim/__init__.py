"""Discrete-event simulator of gPTP time synchronization on automotive Ethernet."""

from .clocks import ClockDiff, DomainClock, DriftModel, Oscillator
from .gptp import EngineConfig, compute_master_estimate, compute_mean_link_delay, update_nrr
from .metrics import TraceRecord, convergence_time, divergence_slope, emit_csv, faults_tolerated, read_csv
from .scenario import (
    BUILTINS,
    FaultEvent,
    ScenarioConfig,
    ScenarioError,
    builtin,
    builtin_quad_motor_ring,
    format_scenario,
    load_scenario,
    parse_scenario,
)
from .simulation import RunResult, Simulation, run_scenario

__version__ = "0.1.0"

__all__ = [
    "ClockDiff",
    "DomainClock",
    "DriftModel",
    "Oscillator",
    "EngineConfig",
    "compute_master_estimate",
    "compute_mean_link_delay",
    "update_nrr",
    "TraceRecord",
    "convergence_time",
    "divergence_slope",
    "emit_csv",
    "faults_tolerated",
    "read_csv",
    "BUILTINS",
    "FaultEvent",
    "ScenarioConfig",
    "ScenarioError",
    "builtin",
    "builtin_quad_motor_ring",
    "format_scenario",
    "load_scenario",
    "parse_scenario",
    "RunResult",
    "Simulation",
    "run_scenario",
]
