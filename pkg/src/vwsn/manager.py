"""VS manager and communicator.

Executes lifecycle commands against nodes, owns the address map and the VS
record table, encodes/decodes platform frames (routing constrained nodes
through their GTO parents), maintains the shared base-station session, and
implements migration with an abort path that restores the source.

Rules enforced here:

* No frame is sent for a transition the lifecycle table forbids.
* A node error during dissemination reverts the record to Configured;
  only a protocol failure that survives the retry budget (2 retries)
  faults the VS.
* The set of bound global addresses always equals the set of VSs in
  {Deployed, Running, Stopped, Migrating}.

All public methods are generator coroutines to be driven on the engine
(yielding transport waiters); callers go through ``Engine.call``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

from .errors import (
    BadFrame,
    IllegalTransition,
    NodeCapacity,
    NodeEnergy,
    ProtocolError,
    TargetCapacity,
    TargetEnergy,
    UnknownVs,
    UnsupportedPlatform,
    VwsnError,
)
from .model import AddressMap, LifecycleEvent, LocalAddress, VirtualSensorRecord, VsState, transition
from .sim.clock import Engine
from .wire import Command, MotesimCodec, Reply, SpotsimCodec, unwrap_gto, wrap_gto

log = logging.getLogger(__name__)

RETRIES = 2

# Node wire code -> control-plane error for commands addressed at the VS's
# own node. QUEUEFULL maps to capacity: the node cannot take more work now.
_ERR_MAP = {
    "CAPACITY": NodeCapacity,
    "ENERGY": NodeEnergy,
    "QUEUEFULL": NodeCapacity,
    "UNSUPPORTED": UnsupportedPlatform,
    "BADFRAME": ProtocolError,
    "NOSLOT": ProtocolError,
}


@dataclass
class MigrationTicket:
    vs_id: str
    source: LocalAddress
    target_node: str
    phase: str = "Extracted"  # Extracted | Installed | Committed | Aborted
    serialized_state: bytes = b""


class VsManager:
    def __init__(self, engine: Engine, transport, metrics=None,
                 base_station_setup_ms: int = 0):
        self.engine = engine
        self.transport = transport
        self.metrics = metrics
        self.address_map = AddressMap()
        self.records: dict[str, VirtualSensorRecord] = {}
        self.base_station_setup_ms = base_station_setup_ms
        self.session_established = False
        self.tickets: list[MigrationTicket] = []

    # -- record table -----------------------------------------------------

    def register_record(self, record: VirtualSensorRecord) -> None:
        self.records[record.vs_id] = record

    def drop_record(self, vs_id: str) -> None:
        self.records.pop(vs_id, None)

    def record(self, vs_id: str) -> VirtualSensorRecord:
        try:
            return self.records[vs_id]
        except KeyError:
            raise UnknownVs(vs_id) from None

    # -- base-station session ------------------------------------------------

    def ensure_session(self):
        """Establish the shared base-station session if absent (costs
        base_station_setup_ms on the virtual clock)."""
        if not self.session_established:
            if self.base_station_setup_ms > 0:
                yield self.engine.sleep(self.base_station_setup_ms)
            self.session_established = True
        return self.session_established

    def reset_session(self) -> None:
        self.session_established = False

    # -- framing ------------------------------------------------------------

    def _route(self, node_id: str):
        platform = self.transport.platform_of(node_id)
        if platform == "MOTESIM":
            parent = self.transport.gto_parent_of(node_id)
            return parent, MotesimCodec, node_id
        return node_id, SpotsimCodec, None

    def _send(self, node_id: str, cmd: Command):
        """Encode, transmit, decode; maps wire errors; retries protocol
        failures. Generator returning a successful Reply."""
        target, codec, relay_child = self._route(node_id)
        frame = codec.encode_command(cmd)
        if relay_child is not None:
            frame = wrap_gto(relay_child, frame)
        attempt = 0
        while True:
            raw = yield self.transport.send(target, frame)
            try:
                reply = self._decode_reply(raw, codec, relay_child)
            except VwsnError as e:
                attempt += 1
                if attempt > RETRIES:
                    raise ProtocolError(f"{cmd.op} to {node_id}: {e}") from None
                log.warning("garbled reply from %s (%s); retry %d", node_id, e, attempt)
                continue
            if reply.ok:
                return reply
            exc_type = _ERR_MAP.get(reply.err_code or "", ProtocolError)
            if exc_type is ProtocolError:
                attempt += 1
                if attempt > RETRIES:
                    raise ProtocolError(f"{cmd.op} to {node_id}: {reply.err_code} {reply.err_text}")
                continue
            raise exc_type(f"{cmd.op} to {node_id}: {reply.err_text}")

    @staticmethod
    def _decode_reply(raw: bytes, codec, relay_child: str | None) -> Reply:
        if relay_child is None:
            return codec.decode_reply(raw)
        # A relayed reply is GTO-prefixed TLV; the GTO may also answer for
        # itself in its own text protocol (e.g. its queue is full).
        try:
            child, inner = unwrap_gto(raw)
        except VwsnError:
            return SpotsimCodec.decode_reply(raw)
        if child != relay_child:
            raise BadFrame(f"relay reply for {child!r}, expected {relay_child!r}")
        return codec.decode_reply(inner)

    # -- lifecycle operations ----------------------------------------------------

    def instantiate(self, record: VirtualSensorRecord, target_node: str):
        """Disseminate the manifest; on node OK bind the address map and
        move to Deployed. Generator returning the LocalAddress."""
        if record.state is not VsState.CONFIGURED:
            raise IllegalTransition(f"cannot instantiate from {record.state.value}")
        self.transport.platform_of(target_node)  # raises NodeUnreachable early
        yield from self.ensure_session()
        record.apply(LifecycleEvent.DEPLOY_BEGIN, self.engine.now())
        try:
            reply = yield from self._send(
                target_node,
                Command("DEPLOY", None, manifest=record.manifest_text.encode("utf-8")))
        except ProtocolError:
            record.apply(LifecycleEvent.FAULT, self.engine.now())
            if self.metrics:
                self.metrics.failures += 1
            raise
        except VwsnError:
            # Capacity/energy/unreachable: dissemination never took; the
            # record stays Configured.
            record.force_state(VsState.CONFIGURED, self.engine.now())
            raise
        local = LocalAddress(target_node, reply.slot)
        self.address_map.bind(record.global_addr, local)
        record.local = local
        record.apply(LifecycleEvent.DEPLOY_OK, self.engine.now())
        return local

    def _checked(self, record: VirtualSensorRecord, event: LifecycleEvent) -> None:
        # Raises before any frame goes out.
        transition(record.state, event, resume=record.resume_state or record.state)

    def start(self, record: VirtualSensorRecord):
        self._checked(record, LifecycleEvent.START_OK)
        local = self.address_map.resolve(record.global_addr)
        yield from self._send(local.node_id, Command("START", local.slot))
        record.apply(LifecycleEvent.START_OK, self.engine.now())
        return record.state

    def stop(self, record: VirtualSensorRecord):
        self._checked(record, LifecycleEvent.STOP_OK)
        local = self.address_map.resolve(record.global_addr)
        reply = yield from self._send(local.node_id, Command("STOP", local.slot))
        if reply.payload:
            record.last_seq = int(reply.payload.decode("ascii"))
        record.apply(LifecycleEvent.STOP_OK, self.engine.now())
        return record.state

    def delete(self, record: VirtualSensorRecord):
        self._checked(record, LifecycleEvent.DELETE_BEGIN)
        local = self.address_map.resolve(record.global_addr)
        prior = record.state
        record.apply(LifecycleEvent.DELETE_BEGIN, self.engine.now())
        try:
            yield from self._send(local.node_id, Command("DELETE", local.slot))
        except ProtocolError:
            record.apply(LifecycleEvent.FAULT, self.engine.now())
            if self.metrics:
                self.metrics.failures += 1
            raise
        except VwsnError:
            record.force_state(prior, self.engine.now())
            raise
        self.address_map.unbind(record.global_addr)
        record.local = None
        record.apply(LifecycleEvent.DELETE_OK, self.engine.now())
        return record.state

    def migrate(self, record: VirtualSensorRecord, target_node: str):
        """Move a VS between SPOTSIM nodes; sequence numbers continue and a
        failed install leaves the source untouched. Generator returning the
        new LocalAddress."""
        self._checked(record, LifecycleEvent.MIGRATE_BEGIN)
        source = self.address_map.resolve(record.global_addr)
        if self.transport.platform_of(source.node_id) != "SPOTSIM":
            raise UnsupportedPlatform("source platform cannot migrate")
        if self.transport.platform_of(target_node) != "SPOTSIM":
            raise UnsupportedPlatform("target platform cannot migrate")
        if target_node == source.node_id:
            raise UnsupportedPlatform("target must be a different node")

        prior = record.state
        record.apply(LifecycleEvent.MIGRATE_BEGIN, self.engine.now())
        ticket = MigrationTicket(record.vs_id, source, target_node)
        self.tickets.append(ticket)
        try:
            out = yield from self._send(source.node_id, Command("MIGOUT", source.slot))
        except VwsnError:
            record.force_state(prior, self.engine.now())
            ticket.phase = "Aborted"
            raise
        bundle = json.loads((out.payload or b"{}").decode("utf-8"))
        manifest_bytes = bundle["manifest"].encode("utf-8")
        state_bytes = bundle["state"].encode("utf-8")
        ticket.serialized_state = state_bytes

        try:
            install = yield from self._send(
                target_node, Command("MIGIN", None, manifest=manifest_bytes, state=state_bytes))
        except VwsnError as e:
            # Restore the frozen source slot in place and resume it.
            try:
                yield from self._send(
                    source.node_id,
                    Command("MIGIN", source.slot, manifest=manifest_bytes, state=state_bytes))
                record.apply(LifecycleEvent.MIGRATE_OK, self.engine.now())
            except VwsnError:
                record.apply(LifecycleEvent.FAULT, self.engine.now())
                log.error("source %s/%d could not be restored after failed install",
                          source.node_id, source.slot)
            ticket.phase = "Aborted"
            if self.metrics:
                self.metrics.failures += 1
            raise self._as_target_error(e) from None

        ticket.phase = "Installed"
        new_local = LocalAddress(target_node, install.slot)
        self.address_map.rebind(record.global_addr, new_local)
        record.local = new_local
        state = json.loads(state_bytes.decode("utf-8"))
        record.last_seq = int(state["next_seq"]) - 1
        try:
            yield from self._send(source.node_id, Command("DELETE", source.slot))
        except VwsnError as e:
            # The VS is live on the target; a stuck source slot is a leak,
            # not a failed migration.
            log.warning("source slot %s/%d not freed after handover: %s",
                        source.node_id, source.slot, e)
            if self.metrics:
                self.metrics.failures += 1
        record.apply(LifecycleEvent.MIGRATE_OK, self.engine.now())
        ticket.phase = "Committed"
        if self.metrics:
            self.metrics.migrations += 1
        return new_local

    @staticmethod
    def _as_target_error(e: VwsnError) -> VwsnError:
        if isinstance(e, NodeCapacity):
            return TargetCapacity(str(e))
        if isinstance(e, NodeEnergy):
            return TargetEnergy(str(e))
        return e
