"""VS provisioning: request intake, configuration, scheduling, caching.

The provider resolves a create request to a node (recent-sensor cache
first, registry query otherwise), configures the task manifest against the
node's declared abilities, disseminates it through the manager, and either
starts the VS immediately or enqueues a deferred start.

Creation is atomic from the caller's view: any downstream failure unwinds
whatever was built, so no half-created VS ever stays bound or visible.
"""

from __future__ import annotations

import itertools
import logging
from collections import OrderedDict
from dataclasses import dataclass, field

from .errors import (
    AlreadyFired,
    IntervalOutOfRange,
    InvalidParams,
    NoCandidateNode,
    PastDue,
    UnitUnsupported,
    UnknownNode,
    UnknownSchedule,
    UnsupportedCapability,
    VwsnError,
)
from .manifest import TaskManifest
from .manager import VsManager
from .metrics import Metrics
from .model import (
    Capability,
    GlobalAddress,
    Unit,
    UNIT_FAMILY,
    VirtualSensorRecord,
    VsState,
    LifecycleEvent,
    convert_unit,
)
from .registry import DiscoveryQuery, Registry, SensorDescription, matches
from .sim.clock import Engine, RANK_SCHEDULER

log = logging.getLogger(__name__)

CACHE_CAPACITY = 16

SCHEDULE_ACTIONS = ("create", "start", "stop", "delete", "disseminate")


@dataclass(frozen=True)
class TaskParams:
    capability: Capability
    sampling_interval_ms: int
    unit: Unit
    endpoint: str
    threshold: float | None = None
    comparator: str | None = None

    def validate(self) -> None:
        if (self.threshold is None) != (self.comparator is None):
            raise InvalidParams("threshold and comparator go together")
        if self.comparator is not None and self.comparator not in ("gt", "lt"):
            raise InvalidParams("comparator must be 'gt' or 'lt'")
        if self.sampling_interval_ms <= 0:
            raise InvalidParams("sampling_interval_ms must be positive")
        if ":" not in self.endpoint:
            raise InvalidParams("endpoint must be host:port")
        if UNIT_FAMILY[self.unit] is not self.capability:
            raise InvalidParams(
                f"unit {self.unit.value} is not a {self.capability.value} unit")


@dataclass(frozen=True)
class CreateRequest:
    app_id: str
    task: TaskParams
    node_id: str | None = None
    query: DiscoveryQuery | None = None
    start_at_ms: int | None = None

    def validate(self) -> None:
        if not self.app_id:
            raise InvalidParams("app_id must be non-empty")
        if (self.node_id is None) == (self.query is None):
            raise InvalidParams("exactly one of node_id or query must be given")
        self.task.validate()


def configure(params: TaskParams, node: SensorDescription, vs_id: str) -> TaskManifest:
    """Validate the request against the node's declaration and emit the
    canonical manifest.

    When the desired unit is not native to the node but is in the same
    family, the manifest carries the node-native unit (with the threshold
    converted) and consumers convert on the data path.
    """
    decl = next((d for d in node.capabilities if d.capability == params.capability), None)
    if decl is None:
        raise UnsupportedCapability(
            f"{node.node_id} has no {params.capability.value} capability")
    if not decl.min_interval_ms <= params.sampling_interval_ms <= decl.max_interval_ms:
        raise IntervalOutOfRange(
            f"interval {params.sampling_interval_ms} outside "
            f"[{decl.min_interval_ms}, {decl.max_interval_ms}]")
    unit = params.unit
    threshold = params.threshold
    if unit not in decl.units:
        if UNIT_FAMILY[unit] is not UNIT_FAMILY[decl.units[0]]:
            raise UnitUnsupported(f"{node.node_id} cannot serve {unit.value}")
        native = decl.units[0]
        if threshold is not None:
            threshold = convert_unit(threshold, unit, native)
        unit = native
    return TaskManifest(
        vs_id=vs_id,
        capability=params.capability,
        sampling_interval_ms=params.sampling_interval_ms,
        unit=unit,
        endpoint=params.endpoint,
        threshold=threshold,
        comparator=params.comparator,
    )


class RecentSensorCache:
    """LRU of canonicalized discovery queries -> last node used for them."""

    def __init__(self, capacity: int = CACHE_CAPACITY):
        self.capacity = capacity
        self._entries: OrderedDict[tuple, str] = OrderedDict()

    def lookup(self, q: DiscoveryQuery) -> str | None:
        key = q.canonical_key()
        if key not in self._entries:
            return None
        self._entries.move_to_end(key)
        return self._entries[key]

    def insert(self, q: DiscoveryQuery, node_id: str) -> None:
        key = q.canonical_key()
        if key in self._entries:
            self._entries.move_to_end(key)
        self._entries[key] = node_id
        while len(self._entries) > self.capacity:
            self._entries.popitem(last=False)

    def evict(self, q: DiscoveryQuery) -> None:
        self._entries.pop(q.canonical_key(), None)

    def __len__(self) -> int:
        return len(self._entries)


@dataclass
class ScheduleEntry:
    id: int
    action: str
    due_ms: int
    vs_id: str | None = None
    request: CreateRequest | None = None
    node_id: str | None = None  # dissemination target
    status: str = "Pending"  # Pending | Fired | Cancelled
    token: object = field(default=None, repr=False)


class Scheduler:
    """Deferred execution of lifecycle actions on the virtual clock.

    Entries fire exactly once at their due instant, ordered by (due, id);
    cancelled entries never fire. A fired action that fails counts as a
    failure but does not disturb the clock.
    """

    def __init__(self, engine: Engine, provider: "Provider"):
        self.engine = engine
        self.provider = provider
        self.entries: dict[int, ScheduleEntry] = {}
        self._ids = itertools.count(1)

    def schedule(self, action: str, due_ms: int, vs_id: str | None = None,
                 request: CreateRequest | None = None, node_id: str | None = None) -> int:
        if action not in SCHEDULE_ACTIONS:
            raise InvalidParams(f"unknown schedule action {action!r}")
        if action == "create":
            if request is None:
                raise InvalidParams("create entries need a request")
            request.validate()
        elif vs_id is None:
            raise InvalidParams(f"{action} entries need a vs_id")
        if action == "disseminate" and node_id is None:
            raise InvalidParams("disseminate entries need a node_id")
        now = self.engine.now()
        if due_ms < now:
            raise PastDue(f"due {due_ms} is before now {now}")
        entry = ScheduleEntry(next(self._ids), action, due_ms, vs_id=vs_id,
                              request=request, node_id=node_id)
        entry.token = self.engine.schedule_at(
            due_ms, lambda: self._fire(entry), rank=RANK_SCHEDULER,
            key=(entry.id,), label=f"schedule:{entry.id}:{action}")
        self.entries[entry.id] = entry
        return entry.id

    def cancel(self, entry_id: int) -> None:
        entry = self.entries.get(entry_id)
        if entry is None:
            raise UnknownSchedule(str(entry_id))
        if entry.status == "Fired":
            raise AlreadyFired(str(entry_id))
        if entry.status == "Pending":
            entry.status = "Cancelled"
            self.engine.cancel(entry.token)

    def cancel_for_vs(self, vs_id: str) -> None:
        """Deleting a VS retires its still-pending entries."""
        for entry in self.entries.values():
            if entry.vs_id == vs_id and entry.status == "Pending":
                entry.status = "Cancelled"
                self.engine.cancel(entry.token)

    def get(self, entry_id: int) -> ScheduleEntry:
        entry = self.entries.get(entry_id)
        if entry is None:
            raise UnknownSchedule(str(entry_id))
        return entry

    def _fire(self, entry: ScheduleEntry) -> None:
        if entry.status != "Pending":
            return
        entry.status = "Fired"

        def failed(exc: BaseException) -> None:
            log.warning("scheduled %s #%d failed: %s", entry.action, entry.id, exc)
            self.provider.metrics.failures += 1

        self.engine.spawn(self.provider.run_scheduled(entry), on_error=failed)


class Provider:
    """VS provider: the entity that turns create requests into running VSs."""

    def __init__(self, engine: Engine, registry: Registry, manager: VsManager,
                 metrics: Metrics, iaas_id: str = "local",
                 cache_capacity: int = CACHE_CAPACITY):
        self.engine = engine
        self.registry = registry
        self.manager = manager
        self.metrics = metrics
        self.iaas_id = iaas_id
        self.cache = RecentSensorCache(cache_capacity)
        self.scheduler = Scheduler(engine, self)

    # -- node selection ------------------------------------------------------

    def _select_node(self, req: CreateRequest) -> SensorDescription:
        if req.node_id is not None:
            try:
                return self.registry.get(req.node_id)
            except UnknownNode:
                raise NoCandidateNode(f"node {req.node_id!r} is not registered") from None
        q = req.query
        cached = self.cache.lookup(q)
        if cached is not None:
            try:
                desc = self.registry.get(cached)
            except UnknownNode:
                desc = None
            # A hit must satisfy the predicate at use time; a node with no
            # free slot cannot serve the request, so it counts as stale too.
            if desc is not None and matches(desc, q) and desc.active_count < desc.capacity:
                return desc
            self.cache.evict(q)
        hits = self.registry.query(q)
        if not hits:
            raise NoCandidateNode("no registered node satisfies the query")
        self.cache.insert(q, hits[0].node_id)
        return hits[0]

    # -- creation ----------------------------------------------------------------

    def handle_create(self, req: CreateRequest):
        """Generator coroutine; returns (record, schedule_id or None)."""
        req.validate()
        t_received = self.engine.now()
        desc = self._select_node(req)
        addr = GlobalAddress.new(self.iaas_id)
        manifest = configure(req.task, desc, addr.render())
        record = VirtualSensorRecord(
            global_addr=addr,
            state=VsState.REQUESTED,
            app_id=req.app_id,
            manifest_text=manifest.text,
            created_at_ms=t_received,
            state_changed_at_ms=t_received,
        )
        record.apply(LifecycleEvent.CONFIGURE, t_received)
        self.manager.register_record(record)
        try:
            yield from self.manager.instantiate(record, desc.node_id)
        except VwsnError:
            self.manager.drop_record(record.vs_id)
            if req.query is not None:
                self.cache.evict(req.query)
            raise
        self.metrics.record_vscd(record.vs_id, self.engine.now() - t_received)
        self.metrics.creates += 1

        schedule_id = None
        if req.start_at_ms is None:
            t_start = self.engine.now()
            try:
                yield from self.manager.start(record)
            except VwsnError:
                # Unwind so the caller never sees a half-created VS.
                try:
                    yield from self.manager.delete(record)
                except VwsnError:
                    log.exception("rollback delete failed for %s", record.vs_id)
                self.manager.drop_record(record.vs_id)
                raise
            self.metrics.record_vsst(record.vs_id, self.engine.now() - t_start)
            self.metrics.starts += 1
        else:
            schedule_id = self.scheduler.schedule("start", req.start_at_ms, vs_id=record.vs_id)
        return record, schedule_id

    # -- lifecycle wrappers used by the API and the scheduler -----------------------

    def start_vs(self, vs_id: str):
        record = self.manager.record(vs_id)
        t0 = self.engine.now()
        yield from self.manager.start(record)
        self.metrics.record_vsst(vs_id, self.engine.now() - t0)
        self.metrics.starts += 1
        return record

    def stop_vs(self, vs_id: str):
        record = self.manager.record(vs_id)
        yield from self.manager.stop(record)
        self.metrics.stops += 1
        return record

    def delete_vs(self, vs_id: str, stop_first: bool = False):
        record = self.manager.record(vs_id)
        if stop_first and record.state is VsState.RUNNING:
            yield from self.manager.stop(record)
            self.metrics.stops += 1
        yield from self.manager.delete(record)
        self.scheduler.cancel_for_vs(vs_id)
        # Deleted records leave the table: a repeated delete (or any later
        # lookup) answers "no such VS".
        self.manager.drop_record(vs_id)
        self.metrics.deletes += 1
        return record

    def migrate_vs(self, vs_id: str, target_node: str):
        record = self.manager.record(vs_id)
        yield from self.manager.migrate(record, target_node)
        return record

    def run_scheduled(self, entry: ScheduleEntry):
        if entry.action == "create":
            yield from self.handle_create(entry.request)
        elif entry.action == "start":
            yield from self.start_vs(entry.vs_id)
        elif entry.action == "stop":
            yield from self.stop_vs(entry.vs_id)
        elif entry.action == "delete":
            yield from self.delete_vs(entry.vs_id)
        elif entry.action == "disseminate":
            record = self.manager.record(entry.vs_id)
            local = yield from self.manager.instantiate(record, entry.node_id)
            return local
