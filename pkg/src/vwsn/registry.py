"""Sensor description repository and discovery.

Descriptions publish a node's static properties (platform, protocol, data
format, capabilities with supported units and sampling intervals, location,
capacity, battery reserve fraction) plus a live view (load, battery
fraction, awake) fed by infrastructure callbacks.

Query semantics are a plain predicate scan: a node matches when some single
capability declaration satisfies all of the capability/unit/interval
criteria together, the node is inside the radius, and the live conditions
hold. Results are ordered by (fewest occupied slots, distance to the query
center or 0, highest battery, node_id). A spatial index would be a legal
optimization but the scan is the contract.

Snapshots persist static fields only; loaded nodes have no live view until
the next update (they are excluded by available_only and min_battery
filters, and rank with load 0 / battery 0).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import CorruptSnapshot, DuplicateNodeId, InvalidQuery, IoFailure, UnknownNode
from .model import Capability, CapabilityDecl, GeoPoint, SignalParams, Unit, geo_distance_m

SNAPSHOT_FORMAT = "vwsn-registry"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class LiveStatus:
    load: float
    battery_fraction: float
    awake: bool


@dataclass(frozen=True)
class SensorDescription:
    node_id: str
    platform: str
    protocol: str          # "SPOTSIM" | "MOTESIM-via-GTO"
    data_format: str       # "text-line" | "tlv"
    capabilities: tuple[CapabilityDecl, ...]
    location: GeoPoint
    capacity: int
    reserve_fraction: float = 0.0
    live: LiveStatus | None = None

    @property
    def load(self) -> float:
        return self.live.load if self.live else 0.0

    @property
    def battery_fraction(self) -> float:
        return self.live.battery_fraction if self.live else 0.0

    @property
    def active_count(self) -> int:
        return round(self.load * self.capacity)

    @property
    def available(self) -> bool:
        """Awake now or waking within the publisher's grace window, with
        battery strictly above the reserve."""
        if self.live is None:
            return False
        return self.live.awake and self.live.battery_fraction > self.reserve_fraction


@dataclass(frozen=True)
class DiscoveryQuery:
    capability: Capability | None = None
    unit: Unit | None = None
    center: GeoPoint | None = None
    radius_m: float | None = None
    max_interval_ms: int | None = None
    available_only: bool = False
    min_battery: float | None = None

    def validate(self) -> None:
        if self.radius_m is not None and self.center is None:
            raise InvalidQuery("radius_m requires center")
        if self.radius_m is not None and self.radius_m < 0:
            raise InvalidQuery("radius_m must be >= 0")
        if self.min_battery is not None and not 0.0 <= self.min_battery <= 1.0:
            raise InvalidQuery("min_battery must be within [0, 1]")
        if self.max_interval_ms is not None and self.max_interval_ms <= 0:
            raise InvalidQuery("max_interval_ms must be positive")

    def canonical_key(self) -> tuple:
        return (
            self.capability.value if self.capability else None,
            self.unit.value if self.unit else None,
            (self.center.lat, self.center.lon) if self.center else None,
            self.radius_m,
            self.max_interval_ms,
            self.available_only,
            self.min_battery,
        )


def matches(desc: SensorDescription, q: DiscoveryQuery) -> bool:
    """The discovery predicate; public so callers can re-validate cache hits."""
    if q.capability is not None or q.unit is not None or q.max_interval_ms is not None:
        def decl_ok(decl: CapabilityDecl) -> bool:
            if q.capability is not None and decl.capability != q.capability:
                return False
            if q.unit is not None and q.unit not in decl.units:
                return False
            if q.max_interval_ms is not None and decl.min_interval_ms > q.max_interval_ms:
                return False
            return True

        if not any(decl_ok(d) for d in desc.capabilities):
            return False
    if q.center is not None and q.radius_m is not None:
        if geo_distance_m(q.center, desc.location) > q.radius_m:
            return False
    if q.available_only and not desc.available:
        return False
    if q.min_battery is not None:
        if desc.live is None or desc.live.battery_fraction < q.min_battery:
            return False
    return True


def ordering_key(desc: SensorDescription, q: DiscoveryQuery) -> tuple:
    distance = geo_distance_m(q.center, desc.location) if q.center is not None else 0.0
    return (desc.active_count, distance, -desc.battery_fraction, desc.node_id)


class Registry:
    """Thread-safe in-memory repository with point-in-time queries."""

    def __init__(self):
        self._lock = threading.RLock()
        self._nodes: dict[str, SensorDescription] = {}

    def register(self, desc: SensorDescription) -> None:
        with self._lock:
            if desc.node_id in self._nodes:
                raise DuplicateNodeId(desc.node_id)
            self._nodes[desc.node_id] = desc

    def deregister(self, node_id: str) -> None:
        with self._lock:
            if node_id not in self._nodes:
                raise UnknownNode(node_id)
            del self._nodes[node_id]

    def get(self, node_id: str) -> SensorDescription:
        with self._lock:
            try:
                return self._nodes[node_id]
            except KeyError:
                raise UnknownNode(node_id) from None

    def update_live(self, node_id: str, load: float, battery_fraction: float, awake: bool) -> None:
        """Publish the node's current load/energy/wakefulness.

        ``awake`` means "awake now or waking within the publisher's grace
        window"; the publisher owns that window.
        """
        with self._lock:
            if node_id not in self._nodes:
                raise UnknownNode(node_id)
            self._nodes[node_id] = replace(
                self._nodes[node_id],
                live=LiveStatus(load=load, battery_fraction=battery_fraction, awake=awake))

    def query(self, q: DiscoveryQuery) -> list[SensorDescription]:
        q.validate()
        with self._lock:
            hits = [d for d in self._nodes.values() if matches(d, q)]
        hits.sort(key=lambda d: ordering_key(d, q))
        return hits

    def all_nodes(self) -> list[SensorDescription]:
        with self._lock:
            return sorted(self._nodes.values(), key=lambda d: d.node_id)

    def __len__(self) -> int:
        with self._lock:
            return len(self._nodes)

    # -- persistence -------------------------------------------------------

    def snapshot(self, path: str | Path) -> None:
        doc = {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "nodes": [_desc_to_dict(d) for d in self.all_nodes()],
        }
        try:
            Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as e:
            raise IoFailure(f"cannot write snapshot: {e}") from None

    def load_snapshot(self, path: str | Path) -> None:
        try:
            raw = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise IoFailure(f"cannot read snapshot: {e}") from None
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as e:
            raise CorruptSnapshot(f"snapshot is not valid JSON: {e}") from None
        if not isinstance(doc, dict) or doc.get("format") != SNAPSHOT_FORMAT:
            raise CorruptSnapshot("missing or wrong format marker")
        if doc.get("version") != SNAPSHOT_VERSION:
            raise CorruptSnapshot(f"unsupported snapshot version {doc.get('version')!r}")
        try:
            descs = [_desc_from_dict(n) for n in doc["nodes"]]
        except (KeyError, TypeError, ValueError) as e:
            raise CorruptSnapshot(f"bad snapshot entry: {e}") from None
        with self._lock:
            self._nodes = {d.node_id: d for d in descs}


def _desc_to_dict(d: SensorDescription) -> dict:
    return {
        "node_id": d.node_id,
        "platform": d.platform,
        "protocol": d.protocol,
        "data_format": d.data_format,
        "location": {"lat": d.location.lat, "lon": d.location.lon},
        "capacity": d.capacity,
        "reserve_fraction": d.reserve_fraction,
        "capabilities": [
            {
                "capability": c.capability.value,
                "units": [u.value for u in c.units],
                "sampling_interval_ms": {"min": c.min_interval_ms, "max": c.max_interval_ms},
                "signal": {
                    "base": c.signal.base,
                    "amplitude": c.signal.amplitude,
                    "period_ms": c.signal.period_ms,
                    "noise_sigma": c.signal.noise_sigma,
                    "seed": c.signal.seed,
                },
            }
            for c in d.capabilities
        ],
    }


def _desc_from_dict(doc: dict) -> SensorDescription:
    return SensorDescription(
        node_id=str(doc["node_id"]),
        platform=str(doc["platform"]),
        protocol=str(doc["protocol"]),
        data_format=str(doc["data_format"]),
        location=GeoPoint(float(doc["location"]["lat"]), float(doc["location"]["lon"])),
        capacity=int(doc["capacity"]),
        reserve_fraction=float(doc.get("reserve_fraction", 0.0)),
        capabilities=tuple(
            CapabilityDecl(
                capability=Capability(c["capability"]),
                units=tuple(Unit(u) for u in c["units"]),
                min_interval_ms=int(c["sampling_interval_ms"]["min"]),
                max_interval_ms=int(c["sampling_interval_ms"]["max"]),
                signal=SignalParams(
                    base=float(c["signal"]["base"]),
                    amplitude=float(c["signal"]["amplitude"]),
                    period_ms=int(c["signal"]["period_ms"]),
                    noise_sigma=float(c["signal"]["noise_sigma"]),
                    seed=int(c["signal"]["seed"]),
                ),
            )
            for c in doc["capabilities"]
        ),
        live=None,
    )


def describe_node(node) -> SensorDescription:
    """Build the published description for a simulated node runtime."""
    cfg = node.config
    return SensorDescription(
        node_id=cfg.node_id,
        platform=cfg.platform,
        protocol="SPOTSIM" if cfg.platform == "SPOTSIM" else "MOTESIM-via-GTO",
        data_format="text-line" if cfg.platform == "SPOTSIM" else "tlv",
        capabilities=cfg.capabilities,
        location=cfg.location,
        capacity=cfg.effective_capacity,
        reserve_fraction=(node.energy.reserve_uj / cfg.battery_uj) if cfg.battery_uj > 0 else 1.0,
        live=None,
    )
