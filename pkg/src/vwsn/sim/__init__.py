"""Discrete-event simulated WSN infrastructure."""

from .clock import Engine, FiredEvent, SimDeadlock, Waiter
from .node import ALWAYS_AWAKE, DutyCycle, NodeConfig, NodeRuntime
from .world import DataHub, Simulation, TcpForwarder, Transport, load_topology, parse_topology, populate

__all__ = [
    "ALWAYS_AWAKE",
    "DataHub",
    "DutyCycle",
    "Engine",
    "FiredEvent",
    "NodeConfig",
    "NodeRuntime",
    "SimDeadlock",
    "Simulation",
    "TcpForwarder",
    "Transport",
    "Waiter",
    "load_topology",
    "parse_topology",
    "populate",
]
