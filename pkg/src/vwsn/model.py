"""Shared domain types: VS lifecycle, addressing, units, geolocation.

The lifecycle state machine is a fixed table; ``transition`` is the single
authority on which moves are legal. Global addresses render as
``vs://<iaas_id>/<32-char lowercase hex uuid>`` and round-trip through
``GlobalAddress.parse``. The address map is the one mutable structure here
and is safe to share across request handler threads.
"""

from __future__ import annotations

import math
import re
import threading
import uuid as uuidlib
from dataclasses import dataclass, field
from enum import Enum

from .errors import AlreadyBound, IllegalTransition, IncompatibleUnits, NotBound

EARTH_RADIUS_M = 6_371_000.0


class VsState(str, Enum):
    REQUESTED = "Requested"
    CONFIGURED = "Configured"
    DEPLOYING = "Deploying"
    DEPLOYED = "Deployed"
    RUNNING = "Running"
    STOPPED = "Stopped"
    MIGRATING = "Migrating"
    DELETING = "Deleting"
    DELETED = "Deleted"
    FAULTED = "Faulted"


class LifecycleEvent(str, Enum):
    CONFIGURE = "configure"
    DEPLOY_BEGIN = "deploy_begin"
    DEPLOY_OK = "deploy_ok"
    START_OK = "start_ok"
    STOP_OK = "stop_ok"
    MIGRATE_BEGIN = "migrate_begin"
    MIGRATE_OK = "migrate_ok"
    DELETE_BEGIN = "delete_begin"
    DELETE_OK = "delete_ok"
    FAULT = "fault"


#: Sentinel target: the machine returns to the state recorded before
#: MIGRATE_BEGIN (a committed or rolled-back handover ends the same way).
RESUME_PRIOR = "resume-prior"

TERMINAL_STATES = frozenset({VsState.DELETED, VsState.FAULTED})

TRANSITIONS: dict[tuple[VsState, LifecycleEvent], object] = {
    (VsState.REQUESTED, LifecycleEvent.CONFIGURE): VsState.CONFIGURED,
    (VsState.CONFIGURED, LifecycleEvent.DEPLOY_BEGIN): VsState.DEPLOYING,
    (VsState.DEPLOYING, LifecycleEvent.DEPLOY_OK): VsState.DEPLOYED,
    (VsState.DEPLOYED, LifecycleEvent.START_OK): VsState.RUNNING,
    (VsState.STOPPED, LifecycleEvent.START_OK): VsState.RUNNING,
    (VsState.RUNNING, LifecycleEvent.STOP_OK): VsState.STOPPED,
    (VsState.RUNNING, LifecycleEvent.MIGRATE_BEGIN): VsState.MIGRATING,
    (VsState.STOPPED, LifecycleEvent.MIGRATE_BEGIN): VsState.MIGRATING,
    (VsState.MIGRATING, LifecycleEvent.MIGRATE_OK): RESUME_PRIOR,
    (VsState.DEPLOYED, LifecycleEvent.DELETE_BEGIN): VsState.DELETING,
    (VsState.STOPPED, LifecycleEvent.DELETE_BEGIN): VsState.DELETING,
    (VsState.DELETING, LifecycleEvent.DELETE_OK): VsState.DELETED,
}
for _s in VsState:
    if _s not in TERMINAL_STATES:
        TRANSITIONS[(_s, LifecycleEvent.FAULT)] = VsState.FAULTED


def transition(state: VsState, event: LifecycleEvent, *, resume: VsState | None = None) -> VsState:
    """Return the successor state, or raise IllegalTransition.

    Pure function over the fixed table. The one history-dependent row,
    (Migrating, migrate_ok), needs the caller to pass the pre-migration
    state as ``resume`` (Running or Stopped).
    """
    try:
        nxt = TRANSITIONS[(state, event)]
    except KeyError:
        raise IllegalTransition(f"{event.value} not allowed in state {state.value}") from None
    if nxt is RESUME_PRIOR:
        if resume not in (VsState.RUNNING, VsState.STOPPED):
            raise IllegalTransition("migrate_ok needs the pre-migration state (Running or Stopped)")
        return resume
    return nxt  # type: ignore[return-value]


# --- addressing -------------------------------------------------------------

_ADDR_RE = re.compile(r"^vs://([A-Za-z0-9_.-]+)/([0-9a-f]{32})$")


@dataclass(frozen=True)
class GlobalAddress:
    """IaaS-scoped VS address, rendered as ``vs://<iaas_id>/<hex uuid>``."""

    iaas_id: str
    vs_uuid: uuidlib.UUID

    def __post_init__(self):
        if not self.iaas_id or "/" in self.iaas_id:
            raise ValueError(f"bad iaas_id: {self.iaas_id!r}")

    def render(self) -> str:
        return f"vs://{self.iaas_id}/{self.vs_uuid.hex}"

    @classmethod
    def parse(cls, text: str) -> "GlobalAddress":
        m = _ADDR_RE.match(text)
        if not m:
            raise ValueError(f"not a VS address: {text!r}")
        return cls(m.group(1), uuidlib.UUID(hex=m.group(2)))

    @classmethod
    def new(cls, iaas_id: str) -> "GlobalAddress":
        return cls(iaas_id, uuidlib.uuid4())

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True)
class LocalAddress:
    """Node-scoped binding: which slot on which node hosts the VS."""

    node_id: str
    slot: int

    def __post_init__(self):
        if self.slot < 0:
            raise ValueError("slot must be non-negative")


class AddressMap:
    """Bijective global<->local map, shared by concurrent handlers.

    ``rebind`` swaps the local side under the same lock that ``resolve``
    takes, so no reader can ever observe the global address unbound during
    a migration.
    """

    def __init__(self):
        self._lock = threading.RLock()
        self._fwd: dict[GlobalAddress, LocalAddress] = {}
        self._rev: dict[LocalAddress, GlobalAddress] = {}

    def bind(self, g: GlobalAddress, l: LocalAddress) -> None:
        with self._lock:
            if g in self._fwd:
                raise AlreadyBound(f"{g} already bound")
            if l in self._rev:
                raise AlreadyBound(f"{l.node_id}/{l.slot} already occupied")
            self._fwd[g] = l
            self._rev[l] = g

    def unbind(self, g: GlobalAddress) -> LocalAddress:
        with self._lock:
            if g not in self._fwd:
                raise NotBound(f"{g} not bound")
            l = self._fwd.pop(g)
            del self._rev[l]
            return l

    def rebind(self, g: GlobalAddress, new_l: LocalAddress) -> LocalAddress:
        """Atomically move ``g`` to ``new_l``; returns the freed local address."""
        with self._lock:
            if g not in self._fwd:
                raise NotBound(f"{g} not bound")
            if new_l in self._rev:
                raise AlreadyBound(f"{new_l.node_id}/{new_l.slot} already occupied")
            old = self._fwd[g]
            del self._rev[old]
            self._fwd[g] = new_l
            self._rev[new_l] = g
            return old

    def resolve(self, g: GlobalAddress) -> LocalAddress:
        with self._lock:
            if g not in self._fwd:
                raise NotBound(f"{g} not bound")
            return self._fwd[g]

    def reverse(self, l: LocalAddress) -> GlobalAddress:
        with self._lock:
            if l not in self._rev:
                raise NotBound(f"{l.node_id}/{l.slot} not occupied")
            return self._rev[l]

    def bound_globals(self) -> set[GlobalAddress]:
        with self._lock:
            return set(self._fwd)

    def __len__(self) -> int:
        with self._lock:
            return len(self._fwd)

    def __contains__(self, g: GlobalAddress) -> bool:
        with self._lock:
            return g in self._fwd


# --- units and capabilities --------------------------------------------------

class Unit(str, Enum):
    CELSIUS = "celsius"
    FAHRENHEIT = "fahrenheit"
    KELVIN = "kelvin"
    LUX = "lux"
    PERCENT_RH = "percent_rh"


class Capability(str, Enum):
    TEMPERATURE = "temperature"
    LIGHT = "light"
    HUMIDITY = "humidity"


UNIT_FAMILY: dict[Unit, Capability] = {
    Unit.CELSIUS: Capability.TEMPERATURE,
    Unit.FAHRENHEIT: Capability.TEMPERATURE,
    Unit.KELVIN: Capability.TEMPERATURE,
    Unit.LUX: Capability.LIGHT,
    Unit.PERCENT_RH: Capability.HUMIDITY,
}

FAMILY_UNITS: dict[Capability, tuple[Unit, ...]] = {
    Capability.TEMPERATURE: (Unit.CELSIUS, Unit.FAHRENHEIT, Unit.KELVIN),
    Capability.LIGHT: (Unit.LUX,),
    Capability.HUMIDITY: (Unit.PERCENT_RH,),
}

# Affine (scale, offset) into the family's canonical unit (celsius for
# temperature; identity elsewhere).
_TO_CANONICAL: dict[Unit, tuple[float, float]] = {
    Unit.CELSIUS: (1.0, 0.0),
    Unit.FAHRENHEIT: (5.0 / 9.0, -32.0 * 5.0 / 9.0),
    Unit.KELVIN: (1.0, -273.15),
    Unit.LUX: (1.0, 0.0),
    Unit.PERCENT_RH: (1.0, 0.0),
}


def convert_unit(value: float, from_unit: Unit, to_unit: Unit) -> float:
    if UNIT_FAMILY[from_unit] is not UNIT_FAMILY[to_unit]:
        raise IncompatibleUnits(f"cannot convert {from_unit.value} to {to_unit.value}")
    if from_unit is to_unit:
        return value
    scale_f, off_f = _TO_CANONICAL[from_unit]
    canonical = value * scale_f + off_f
    scale_t, off_t = _TO_CANONICAL[to_unit]
    return (canonical - off_t) / scale_t


# --- geolocation -------------------------------------------------------------

@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


def geo_distance_m(a: GeoPoint, b: GeoPoint) -> float:
    """Haversine great-circle distance in meters."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


# --- sensing declarations ----------------------------------------------------

@dataclass(frozen=True)
class SignalParams:
    """Deterministic synthetic phenomenon: sine plus seeded gaussian noise."""

    base: float
    amplitude: float
    period_ms: int
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.period_ms <= 0:
            raise ValueError("period_ms must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class CapabilityDecl:
    """One sensing ability of a node with its supported units and rates."""

    capability: Capability
    units: tuple[Unit, ...]
    min_interval_ms: int
    max_interval_ms: int
    signal: SignalParams

    def __post_init__(self):
        if not self.units:
            raise ValueError("units must be non-empty")
        family = FAMILY_UNITS[self.capability]
        for u in self.units:
            if u not in family:
                raise ValueError(f"unit {u.value} not in {self.capability.value} family")
        if not 0 < self.min_interval_ms <= self.max_interval_ms:
            raise ValueError("need 0 < min_interval_ms <= max_interval_ms")


# --- the VS record -------------------------------------------------------------

@dataclass
class VirtualSensorRecord:
    """One virtual sensor: a single application task bound to one node slot."""

    global_addr: GlobalAddress
    state: VsState
    app_id: str
    manifest_text: str
    created_at_ms: int
    state_changed_at_ms: int
    local: LocalAddress | None = None
    last_seq: int = 0
    # State to resume after a migration completes or aborts.
    resume_state: VsState | None = field(default=None, repr=False)

    @property
    def vs_id(self) -> str:
        return self.global_addr.vs_uuid.hex

    def apply(self, event: LifecycleEvent, now_ms: int) -> VsState:
        """Advance through the lifecycle table, tracking the change time."""
        if event is LifecycleEvent.MIGRATE_BEGIN:
            self.resume_state = self.state
        self.state = transition(self.state, event, resume=self.resume_state)
        if event is LifecycleEvent.MIGRATE_OK:
            self.resume_state = None
        self.state_changed_at_ms = now_ms
        return self.state

    def force_state(self, state: VsState, now_ms: int) -> None:
        """Administrative reset outside the table (failed dissemination
        reverts to Configured without consuming a lifecycle event)."""
        self.state = state
        self.state_changed_at_ms = now_ms
