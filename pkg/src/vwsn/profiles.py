"""Delay and energy configuration ("scenario" files).

Virtual delays are deliberately configuration, not constants: absolute
toolchain timings vary with the host, so the service models them as a
profile and the benchmark picks profiles whose structure is meaningful.
All energy accounting runs in integer microjoules so conservation checks
are exact.

Scenario file (JSON):

    {
      "version": 1,
      "delays": {"base_station_setup_ms": 9309, "build_ms": 12000,
                 "per_kb_ms": 0, "sync_ms": 2973, "start_sync_ms": 4200,
                 "noise_sigma_ms": 0, "seed": 7},
      "energy": {"e_sample_j": 0.005, "e_cmd_j": 0.02, "reserve_j": 1.0},
      "availability_grace_ms": 5000
    }

All keys are optional; omitted ones take the defaults below.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidConfig


def joules_to_uj(j: float) -> int:
    return round(j * 1_000_000)


@dataclass(frozen=True)
class DelayProfile:
    """Virtual-ms costs of control-plane operations."""

    base_station_setup_ms: int = 9_309
    build_ms: int = 12_000
    per_kb_ms: int = 0
    sync_ms: int = 2_973
    start_sync_ms: int = 4_200
    noise_sigma_ms: float = 0.0
    seed: int = 0

    def deploy_ms(self, manifest_size_bytes: int) -> int:
        return round(self.build_ms + self.per_kb_ms * (manifest_size_bytes / 1024.0) + self.sync_ms)


@dataclass(frozen=True)
class EnergyParams:
    """Per-operation energy costs, integer microjoules."""

    e_sample_uj: int = 5_000
    e_cmd_uj: int = 20_000
    reserve_uj: int = 1_000_000


@dataclass(frozen=True)
class ScenarioConfig:
    delays: DelayProfile = field(default_factory=DelayProfile)
    energy: EnergyParams = field(default_factory=EnergyParams)
    availability_grace_ms: int = 5_000


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise InvalidConfig("scenario document must be an object")
    if doc.get("version", 1) != 1:
        raise InvalidConfig(f"unsupported scenario version {doc.get('version')!r}")
    try:
        d = doc.get("delays", {})
        delays = DelayProfile(
            base_station_setup_ms=int(d.get("base_station_setup_ms", 9_309)),
            build_ms=int(d.get("build_ms", 12_000)),
            per_kb_ms=int(d.get("per_kb_ms", 0)),
            sync_ms=int(d.get("sync_ms", 2_973)),
            start_sync_ms=int(d.get("start_sync_ms", 4_200)),
            noise_sigma_ms=float(d.get("noise_sigma_ms", 0.0)),
            seed=int(d.get("seed", 0)),
        )
        e = doc.get("energy", {})
        energy = EnergyParams(
            e_sample_uj=joules_to_uj(float(e.get("e_sample_j", 0.005))),
            e_cmd_uj=joules_to_uj(float(e.get("e_cmd_j", 0.02))),
            reserve_uj=joules_to_uj(float(e.get("reserve_j", 1.0))),
        )
        grace = int(doc.get("availability_grace_ms", 5_000))
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad scenario value: {exc}") from None
    if min(delays.base_station_setup_ms, delays.build_ms, delays.per_kb_ms,
           delays.sync_ms, delays.start_sync_ms) < 0 or delays.noise_sigma_ms < 0:
        raise InvalidConfig("delay values must be non-negative")
    if min(energy.e_sample_uj, energy.e_cmd_uj, energy.reserve_uj) < 0:
        raise InvalidConfig("energy values must be non-negative")
    return ScenarioConfig(delays=delays, energy=energy, availability_grace_ms=grace)


def load_scenario(path: str | Path) -> ScenarioConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InvalidConfig(f"cannot read scenario file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"scenario file is not valid JSON: {exc}") from None
    return scenario_from_dict(doc)
