"""Shared builders for simulation-level and service-level tests."""

from __future__ import annotations

import pytest

from vwsn.model import Capability, CapabilityDecl, GeoPoint, SignalParams, Unit
from vwsn.profiles import DelayProfile, EnergyParams, ScenarioConfig
from vwsn.sim.clock import Engine
from vwsn.sim.node import DutyCycle, NodeConfig
from vwsn.sim.world import Simulation

ZERO_DELAYS = DelayProfile(base_station_setup_ms=0, build_ms=0, per_kb_ms=0,
                           sync_ms=0, start_sync_ms=0, noise_sigma_ms=0.0, seed=0)


def zero_delay_scenario(**energy_kwargs) -> ScenarioConfig:
    return ScenarioConfig(delays=ZERO_DELAYS, energy=EnergyParams(**energy_kwargs))


def temp_decl(base=21.5, amplitude=0.0, period_ms=60_000, noise_sigma=0.0, seed=1,
              units=(Unit.CELSIUS,), min_interval_ms=100, max_interval_ms=600_000):
    return CapabilityDecl(
        capability=Capability.TEMPERATURE,
        units=tuple(units),
        min_interval_ms=min_interval_ms,
        max_interval_ms=max_interval_ms,
        signal=SignalParams(base=base, amplitude=amplitude, period_ms=period_ms,
                            noise_sigma=noise_sigma, seed=seed),
    )


def light_decl(base=500.0, amplitude=400.0, period_ms=60_000, seed=3):
    return CapabilityDecl(
        capability=Capability.LIGHT,
        units=(Unit.LUX,),
        min_interval_ms=100,
        max_interval_ms=600_000,
        signal=SignalParams(base=base, amplitude=amplitude, period_ms=period_ms,
                            noise_sigma=0.0, seed=seed),
    )


def node_config(node_id="spot-1", platform="SPOTSIM", capabilities=None,
                battery_j=100.0, duty=(1000, 1000), capacity=None, gto_parent=None,
                lat=45.5, lon=-73.6) -> NodeConfig:
    return NodeConfig(
        node_id=node_id,
        platform=platform,
        capabilities=tuple(capabilities if capabilities is not None else [temp_decl()]),
        location=GeoPoint(lat, lon),
        battery_uj=round(battery_j * 1_000_000),
        duty_cycle=DutyCycle(*duty),
        capacity=capacity,
        gto_parent=gto_parent,
    )


@pytest.fixture
def engine():
    return Engine()


@pytest.fixture
def sim(engine):
    return Simulation(engine, zero_delay_scenario())


def make_sim(scenario: ScenarioConfig | None = None) -> tuple[Engine, Simulation]:
    eng = Engine()
    return eng, Simulation(eng, scenario or zero_delay_scenario())


def run_command(engine: Engine, sim: Simulation, node_id: str, frame: bytes) -> bytes:
    """Send a wire frame and drive the engine until the reply lands."""

    def op():
        waiter = sim.transport.send(node_id, frame)

        def gen():
            return (yield waiter)

        return gen()

    return engine.call(op)
