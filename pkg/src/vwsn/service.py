"""Service assembly: one engine, one simulation, one control plane.

Wires the pieces together: nodes push live load/battery/wakefulness into
the registry, the manager talks to nodes through the simulation transport,
and the provider sits on top. The REST layer (vwsn.api) works against this
object.
"""

from __future__ import annotations

import logging
from pathlib import Path

from .errors import UnknownNode
from .manager import VsManager
from .metrics import Metrics
from .profiles import ScenarioConfig, load_scenario
from .provisioning import Provider
from .registry import Registry, describe_node
from .sim.clock import Engine
from .sim.node import NodeConfig, NodeRuntime
from .sim.world import DataHub, Simulation, TcpForwarder, load_topology, parse_topology

log = logging.getLogger(__name__)


class Service:
    def __init__(self, engine: Engine, sim: Simulation, registry: Registry,
                 manager: VsManager, provider: Provider, metrics: Metrics,
                 scenario: ScenarioConfig, iaas_id: str):
        self.engine = engine
        self.sim = sim
        self.registry = registry
        self.manager = manager
        self.provider = provider
        self.metrics = metrics
        self.scenario = scenario
        self.iaas_id = iaas_id

    @classmethod
    def build(cls, topology: dict | str | Path, scenario: ScenarioConfig | str | Path | None = None,
              realtime: bool = False, forward_data: bool = False) -> "Service":
        if isinstance(scenario, (str, Path)):
            scenario = load_scenario(scenario)
        scenario = scenario or ScenarioConfig()
        if isinstance(topology, dict):
            iaas_id, configs = parse_topology(topology)
        else:
            iaas_id, configs = load_topology(topology)

        engine = Engine(realtime=realtime)
        registry = Registry()
        metrics = Metrics()
        hub = DataHub(fallback=TcpForwarder() if forward_data else None)

        def push_live(node: NodeRuntime) -> None:
            try:
                registry.update_live(
                    node.config.node_id,
                    load=node.load,
                    battery_fraction=node.battery_fraction,
                    awake=node.awake_or_soon(scenario.availability_grace_ms),
                )
            except UnknownNode:
                pass  # spawn-time callback before registration

        sim = Simulation(engine, scenario, hub=hub, on_node_change=push_live)
        manager = VsManager(engine, sim.transport, metrics=metrics,
                            base_station_setup_ms=scenario.delays.base_station_setup_ms)
        provider = Provider(engine, registry, manager, metrics, iaas_id=iaas_id)
        service = cls(engine, sim, registry, manager, provider, metrics, scenario, iaas_id)
        for cfg in sorted(configs, key=lambda c: (c.platform != "SPOTSIM", c.node_id)):
            service.add_node(cfg)
        return service

    def add_node(self, config: NodeConfig) -> NodeRuntime:
        node = self.sim.spawn_node(config)
        self.registry.register(describe_node(node))
        self.registry.update_live(
            config.node_id, load=node.load, battery_fraction=node.battery_fraction,
            awake=node.awake_or_soon(self.scenario.availability_grace_ms))
        return node

    def start(self) -> None:
        self.engine.start()

    def stop(self) -> None:
        self.engine.stop()
        fallback = self.sim.hub.fallback
        if isinstance(fallback, TcpForwarder):
            fallback.close()

    def write_snapshot(self, path: str | Path) -> None:
        self.registry.snapshot(path)
        log.info("registry snapshot written to %s", path)
