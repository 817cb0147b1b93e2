"""Simulation container: nodes, command transport, data delivery.

The topology file is JSON:

    {
      "version": 1,
      "iaas_id": "home",
      "nodes": [
        {"node_id": "spot-1", "platform": "SPOTSIM",
         "location": {"lat": 45.5, "lon": -73.6},
         "battery_j": 50.0,
         "duty_cycle": {"period_ms": 1000, "awake_ms": 1000},
         "capacity": 4,
         "capabilities": [
           {"capability": "temperature", "units": ["celsius", "fahrenheit"],
            "sampling_interval_ms": {"min": 100, "max": 600000},
            "signal": {"base": 22.0, "amplitude": 6.0, "period_ms": 600000,
                       "noise_sigma": 0.0, "seed": 11}}]},
        {"node_id": "mote-1", "platform": "MOTESIM", "gto_parent": "spot-1", ...}
      ]
    }

SPOTSIM nodes are spawned before MOTESIM ones so GTO parent references
resolve regardless of file order.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
from pathlib import Path
from typing import Callable

from ..errors import DuplicateNodeId, InvalidConfig, NodeUnreachable
from ..model import Capability, CapabilityDecl, GeoPoint, SignalParams, Unit
from ..profiles import ScenarioConfig, joules_to_uj
from .clock import Engine, Waiter
from .node import DutyCycle, NodeConfig, NodeRuntime

log = logging.getLogger(__name__)


class DataHub:
    """Routes emitted data frames to their manifest endpoints.

    Endpoints registered in-process win; anything else goes through the
    fallback (the service installs a TCP forwarder there). Undeliverable
    frames are dropped with a warning, sensor-network style.
    """

    def __init__(self, fallback: Callable[[str, bytes], None] | None = None):
        self._sinks: dict[str, Callable[[bytes], None]] = {}
        self.fallback = fallback
        self.dropped = 0

    def register(self, endpoint: str, sink: Callable[[bytes], None]) -> None:
        self._sinks[endpoint] = sink

    def unregister(self, endpoint: str) -> None:
        self._sinks.pop(endpoint, None)

    def deliver(self, endpoint: str, frame: bytes) -> None:
        sink = self._sinks.get(endpoint)
        if sink is not None:
            sink(frame)
            return
        if self.fallback is not None:
            self.fallback(endpoint, frame)
            return
        self.dropped += 1
        log.warning("no sink for endpoint %s; frame dropped", endpoint)


class TcpForwarder:
    """Lazy per-endpoint TCP connections used by the running service."""

    def __init__(self, timeout_s: float = 5.0):
        self._timeout = timeout_s
        self._conns: dict[str, socket.socket] = {}
        self._lock = threading.Lock()
        self.errors = 0

    def __call__(self, endpoint: str, frame: bytes) -> None:
        try:
            with self._lock:
                conn = self._conns.get(endpoint)
                if conn is None:
                    host, _, port = endpoint.rpartition(":")
                    conn = socket.create_connection((host, int(port)), timeout=self._timeout)
                    self._conns[endpoint] = conn
                conn.sendall(frame)
        except OSError as e:
            self.errors += 1
            with self._lock:
                stale = self._conns.pop(endpoint, None)
            if stale is not None:
                try:
                    stale.close()
                except OSError:
                    pass
            log.warning("data delivery to %s failed: %s", endpoint, e)

    def close(self) -> None:
        with self._lock:
            for conn in self._conns.values():
                try:
                    conn.close()
                except OSError:
                    pass
            self._conns.clear()


class Simulation:
    """Heterogeneous node fleet sharing one virtual clock."""

    def __init__(self, engine: Engine, scenario: ScenarioConfig, hub: DataHub | None = None,
                 on_node_change: Callable[[NodeRuntime], None] | None = None):
        self.engine = engine
        self.scenario = scenario
        self.hub = hub or DataHub()
        self.nodes: dict[str, NodeRuntime] = {}
        self.on_node_change = on_node_change
        self.transport = Transport(self)

    def spawn_node(self, config: NodeConfig) -> NodeRuntime:
        if config.node_id in self.nodes:
            raise DuplicateNodeId(config.node_id)
        if config.platform == "MOTESIM":
            parent = self.nodes.get(config.gto_parent or "")
            if parent is None or parent.config.platform != "SPOTSIM":
                raise InvalidConfig(
                    f"gto_parent {config.gto_parent!r} of {config.node_id} "
                    "must be an existing SPOTSIM node")
        node = NodeRuntime(
            config, self.engine, self.scenario.delays, self.scenario.energy,
            deliver=self.hub.deliver, relay_lookup=self.nodes.get,
            on_change=self._node_changed)
        self.nodes[config.node_id] = node
        self._node_changed(node)
        return node

    def _node_changed(self, node: NodeRuntime) -> None:
        if self.on_node_change is not None:
            self.on_node_change(node)

    def node(self, node_id: str) -> NodeRuntime:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise NodeUnreachable(f"no node {node_id!r}") from None

    def advance(self, dt_ms: int):
        return self.engine.advance(dt_ms)


class Transport:
    """Frame-level path from the control plane to node radios.

    Supports reply-corruption injection for fault testing.
    """

    def __init__(self, sim: Simulation):
        self._sim = sim
        self._corrupt: dict[str, int] = {}

    def corrupt_replies(self, node_id: str, count: int) -> None:
        self._corrupt[node_id] = self._corrupt.get(node_id, 0) + count

    def send(self, node_id: str, frame: bytes) -> Waiter:
        node = self._sim.nodes.get(node_id)
        if node is None:
            return Waiter.failed(NodeUnreachable(f"no node {node_id!r}"))
        reply = node.submit_frame(frame)
        if self._corrupt.get(node_id, 0) > 0:
            self._corrupt[node_id] -= 1
            garbled = Waiter()
            reply.subscribe(lambda value, exc: garbled.resolve(b"\xff\xfe garbled \xff"))
            return garbled
        return reply

    def platform_of(self, node_id: str) -> str:
        return self._sim.node(node_id).config.platform

    def gto_parent_of(self, node_id: str) -> str | None:
        return self._sim.node(node_id).config.gto_parent


# --- topology loading -----------------------------------------------------------


def _decl_from_dict(doc: dict) -> CapabilityDecl:
    interval = doc.get("sampling_interval_ms", {})
    sig_doc = doc.get("signal", {})
    return CapabilityDecl(
        capability=Capability(doc["capability"]),
        units=tuple(Unit(u) for u in doc["units"]),
        min_interval_ms=int(interval["min"]),
        max_interval_ms=int(interval["max"]),
        signal=SignalParams(
            base=float(sig_doc.get("base", 0.0)),
            amplitude=float(sig_doc.get("amplitude", 0.0)),
            period_ms=int(sig_doc.get("period_ms", 60_000)),
            noise_sigma=float(sig_doc.get("noise_sigma", 0.0)),
            seed=int(sig_doc.get("seed", 0)),
        ),
    )


def node_config_from_dict(doc: dict) -> NodeConfig:
    try:
        duty = doc.get("duty_cycle")
        duty_cycle = (DutyCycle(int(duty["period_ms"]), int(duty["awake_ms"]))
                      if duty else DutyCycle(1000, 1000))
        loc = doc["location"]
        return NodeConfig(
            node_id=str(doc["node_id"]),
            platform=str(doc["platform"]),
            capabilities=tuple(_decl_from_dict(c) for c in doc.get("capabilities", [])),
            location=GeoPoint(float(loc["lat"]), float(loc["lon"])),
            battery_uj=joules_to_uj(float(doc.get("battery_j", 100.0))),
            duty_cycle=duty_cycle,
            capacity=int(doc["capacity"]) if "capacity" in doc else None,
            gto_parent=doc.get("gto_parent"),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidConfig(f"bad node entry {doc.get('node_id', '?')!r}: {e}") from None


def parse_topology(doc: dict) -> tuple[str, list[NodeConfig]]:
    if not isinstance(doc, dict) or doc.get("version", 1) != 1:
        raise InvalidConfig("topology must be a version-1 object")
    iaas_id = str(doc.get("iaas_id", "local"))
    configs = [node_config_from_dict(n) for n in doc.get("nodes", [])]
    return iaas_id, configs


def load_topology(path: str | Path) -> tuple[str, list[NodeConfig]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise InvalidConfig(f"cannot read topology: {e}") from None
    except json.JSONDecodeError as e:
        raise InvalidConfig(f"topology is not valid JSON: {e}") from None
    return parse_topology(doc)


def populate(sim: Simulation, configs: list[NodeConfig]) -> None:
    """Spawn a parsed topology, parents before GTO children."""
    for cfg in sorted(configs, key=lambda c: (c.platform != "SPOTSIM", c.node_id)):
        sim.spawn_node(cfg)
