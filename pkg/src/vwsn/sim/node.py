"""Simulated sensor nodes.

A node is a bundle of VS slots driven by the shared virtual clock. Two
platforms exist: SPOTSIM (capable; text-line protocol; several slots;
migration support; may act as a GTO relay for constrained children) and
MOTESIM (constrained; binary TLV via its GTO parent; exactly one slot; no
migration).

Behavioral rules:

* Commands arriving while the node sleeps are queued (depth 32) and run at
  the exact next awake edge.
* Sampling follows the manifest cadence anchored at start completion;
  cadence points that land in a sleep window are emitted at the next awake
  edge (so no data timestamp ever falls inside a sleep window) and sequence
  numbers stay gap-free.
* Every executed command costs e_cmd, every emitted sample e_sample; a node
  whose remaining energy is below the reserve refuses commands with ERR
  ENERGY and stops emitting. Accounting is integer microjoules, exact.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from ..errors import InvalidConfig
from ..manifest import TaskManifest
from ..model import CapabilityDecl, GeoPoint, convert_unit
from ..profiles import DelayProfile, EnergyParams
from ..wire import Command, DataMessage, Reply, is_gto_frame, unwrap_gto, wrap_gto, codec_for
from . import signal as sig
from .clock import Engine, RANK_NODE, Waiter

log = logging.getLogger(__name__)

COMMAND_QUEUE_DEPTH = 32
SPOTSIM_DEFAULT_CAPACITY = 4
MOTESIM_CAPACITY = 1

PLATFORMS = ("SPOTSIM", "MOTESIM")


@dataclass(frozen=True)
class DutyCycle:
    period_ms: int
    awake_ms: int

    def __post_init__(self):
        if self.period_ms <= 0:
            raise ValueError("period_ms must be positive")
        if not 0 <= self.awake_ms <= self.period_ms:
            raise ValueError("need 0 <= awake_ms <= period_ms")

    def awake(self, t_ms: int) -> bool:
        return (t_ms % self.period_ms) < self.awake_ms

    def next_awake_edge(self, t_ms: int) -> int:
        """Earliest instant >= t at which the node is awake."""
        if self.awake(t_ms):
            return t_ms
        return (t_ms // self.period_ms + 1) * self.period_ms


ALWAYS_AWAKE = DutyCycle(period_ms=1000, awake_ms=1000)


@dataclass(frozen=True)
class NodeConfig:
    node_id: str
    platform: str
    capabilities: tuple[CapabilityDecl, ...]
    location: GeoPoint
    battery_uj: int
    duty_cycle: DutyCycle = ALWAYS_AWAKE
    capacity: int | None = None
    gto_parent: str | None = None

    def validate(self) -> None:
        if not self.node_id:
            raise InvalidConfig("node_id must be non-empty")
        if self.platform not in PLATFORMS:
            raise InvalidConfig(f"unknown platform {self.platform!r}")
        if self.battery_uj < 0:
            raise InvalidConfig("battery must be >= 0")
        if self.platform == "MOTESIM":
            if self.gto_parent is None:
                raise InvalidConfig(f"MOTESIM node {self.node_id} needs a gto_parent")
            if self.effective_capacity != MOTESIM_CAPACITY:
                raise InvalidConfig("MOTESIM capacity is fixed at 1")
        else:
            if self.gto_parent is not None:
                raise InvalidConfig(f"SPOTSIM node {self.node_id} must not have a gto_parent")
            if self.effective_capacity <= 0:
                raise InvalidConfig("capacity must be positive")

    @property
    def effective_capacity(self) -> int:
        if self.capacity is not None:
            return self.capacity
        return MOTESIM_CAPACITY if self.platform == "MOTESIM" else SPOTSIM_DEFAULT_CAPACITY


class _Slot:
    __slots__ = ("manifest", "installing", "running", "frozen", "next_seq",
                 "anchor_ms", "cadence_k", "sample_event")

    def __init__(self, manifest: TaskManifest):
        self.manifest = manifest
        self.installing = True
        self.running = False
        self.frozen = False
        self.next_seq = 1
        self.anchor_ms = 0
        self.cadence_k = 0
        self.sample_event = None


def serialize_slot_state(slot: _Slot) -> bytes:
    return json.dumps(
        {"next_seq": slot.next_seq, "running": slot.running,
         "anchor_ms": slot.anchor_ms, "cadence_k": slot.cadence_k},
        sort_keys=True,
    ).encode("utf-8")


class NodeRuntime:
    """One simulated node attached to an engine."""

    def __init__(self, config: NodeConfig, engine: Engine, delays: DelayProfile,
                 energy: EnergyParams, deliver: Callable[[str, bytes], None],
                 relay_lookup: Callable[[str], Optional["NodeRuntime"]] | None = None,
                 on_change: Callable[["NodeRuntime"], None] | None = None):
        config.validate()
        self.config = config
        self.engine = engine
        self.delays = delays
        self.energy = energy
        self._deliver = deliver
        self._relay_lookup = relay_lookup
        self._on_change = on_change
        self.codec = codec_for(config.platform)
        self.slots: list[_Slot | None] = [None] * config.effective_capacity
        self.samples_emitted = 0
        self.commands_executed = 0
        self._queue: deque[tuple[bytes, Waiter]] = deque()
        self._drain_event = None
        self._jitter_counter = 0
        self._forced_errors: deque[tuple[str, str]] = deque()
        self.emitted: list[DataMessage] = []

    # -- energy -----------------------------------------------------------

    @property
    def consumed_uj(self) -> int:
        return (self.energy.e_sample_uj * self.samples_emitted
                + self.energy.e_cmd_uj * self.commands_executed)

    @property
    def battery_remaining_uj(self) -> int:
        return self.config.battery_uj - self.consumed_uj

    @property
    def battery_fraction(self) -> float:
        if self.config.battery_uj <= 0:
            return 0.0
        return self.battery_remaining_uj / self.config.battery_uj

    def _has_energy(self) -> bool:
        return self.battery_remaining_uj >= self.energy.reserve_uj

    # -- introspection ------------------------------------------------------

    @property
    def occupied_slots(self) -> int:
        return sum(1 for s in self.slots if s is not None)

    @property
    def load(self) -> float:
        return self.occupied_slots / len(self.slots)

    def awake_now(self) -> bool:
        return self.config.duty_cycle.awake(self.engine.now())

    def awake_or_soon(self, grace_ms: int) -> bool:
        now = self.engine.now()
        return self.config.duty_cycle.next_awake_edge(now) - now <= grace_ms

    def decl_for(self, capability) -> CapabilityDecl | None:
        for decl in self.config.capabilities:
            if decl.capability == capability:
                return decl
        return None

    # -- test hook ------------------------------------------------------------

    def force_error(self, op: str, code: str) -> None:
        """Make the next command with this op fail with the given wire code."""
        self._forced_errors.append((op, code))

    # -- wire entry -------------------------------------------------------------

    def submit_frame(self, frame: bytes) -> Waiter:
        """Full node-side path: returns a waiter for the reply frame bytes.

        Must be called from engine context (an event or a submitted job).
        """
        waiter = Waiter()
        if not self.awake_now():
            if len(self._queue) >= COMMAND_QUEUE_DEPTH:
                waiter.resolve(self._encode_reply(Reply(False, err_code="QUEUEFULL",
                                                        err_text="command queue full")))
                return waiter
            self._queue.append((frame, waiter))
            self._ensure_drain()
            return waiter
        self._process_frame(frame, waiter)
        return waiter

    def _ensure_drain(self) -> None:
        if self._drain_event is not None:
            return
        edge = self.config.duty_cycle.next_awake_edge(self.engine.now())
        self._drain_event = self.engine.schedule_at(
            edge, self._drain_queue, rank=RANK_NODE,
            key=(self.config.node_id, -1), label=f"wake:{self.config.node_id}")

    def _drain_queue(self) -> None:
        self._drain_event = None
        while self._queue:
            frame, waiter = self._queue.popleft()
            self._process_frame(frame, waiter)

    def _encode_reply(self, reply: Reply) -> bytes:
        return self.codec.encode_reply(reply)

    def _process_frame(self, frame: bytes, waiter: Waiter) -> None:
        if self.config.platform == "SPOTSIM" and is_gto_frame(frame):
            self._relay(frame, waiter)
            return
        try:
            cmd = self.codec.decode_command(frame)
        except Exception as e:  # noqa: BLE001 - malformed input answers on the wire
            waiter.resolve(self._encode_reply(Reply(False, err_code="BADFRAME", err_text=str(e))))
            return
        inner = self.execute_command(cmd)
        inner.subscribe(lambda reply, exc: waiter.resolve(self._encode_reply(reply)))

    def _relay(self, frame: bytes, waiter: Waiter) -> None:
        from ..wire import MotesimCodec

        try:
            child_id, inner = unwrap_gto(frame)
        except Exception as e:  # noqa: BLE001
            waiter.resolve(self._encode_reply(Reply(False, err_code="BADFRAME", err_text=str(e))))
            return
        child = self._relay_lookup(child_id) if self._relay_lookup else None
        if child is None or child.config.gto_parent != self.config.node_id:
            err = MotesimCodec.encode_reply(Reply(False, err_code="BADFRAME",
                                                  err_text=f"no child {child_id}"))
            waiter.resolve(wrap_gto(child_id, err))
            return
        child_waiter = child.submit_frame(inner)
        child_waiter.subscribe(lambda reply_bytes, exc: waiter.resolve(wrap_gto(child_id, reply_bytes)))

    # -- command execution ---------------------------------------------------------

    def execute_command(self, cmd: Command) -> Waiter:
        """Execute a decoded command now; resolves with a Reply."""
        waiter = Waiter()
        if self._forced_errors and self._forced_errors[0][0] == cmd.op:
            _, code = self._forced_errors.popleft()
            waiter.resolve(Reply(False, err_code=code, err_text="injected"))
            return waiter
        if not self._has_energy():
            waiter.resolve(Reply(False, err_code="ENERGY", err_text="battery below reserve"))
            return waiter
        handler = getattr(self, f"_op_{cmd.op.lower()}", None)
        if handler is None:
            waiter.resolve(Reply(False, err_code="BADFRAME", err_text=f"unknown op {cmd.op}"))
            return waiter
        handler(cmd, waiter)
        return waiter

    def _debit_command(self) -> None:
        self.commands_executed += 1
        self._changed()

    def _changed(self) -> None:
        if self._on_change is not None:
            self._on_change(self)

    def _jitter(self) -> int:
        self._jitter_counter += 1
        return sig.delay_jitter_ms(self.delays.seed, self.config.node_id,
                                   self._jitter_counter, self.delays.noise_sigma_ms)

    def _pick_slot(self, requested: int | None) -> tuple[int | None, Reply | None]:
        if requested is None:
            for i, s in enumerate(self.slots):
                if s is None:
                    return i, None
            return None, Reply(False, err_code="CAPACITY", err_text="no free slot")
        if not 0 <= requested < len(self.slots):
            return None, Reply(False, err_code="NOSLOT", err_text=f"slot {requested} out of range")
        if self.slots[requested] is not None:
            return None, Reply(False, err_code="CAPACITY", err_text=f"slot {requested} occupied")
        return requested, None

    def _op_deploy(self, cmd: Command, waiter: Waiter) -> None:
        index, err = self._pick_slot(cmd.slot)
        if err is not None:
            waiter.resolve(err)
            return
        try:
            manifest = TaskManifest.parse(cmd.manifest or b"")
        except Exception as e:  # noqa: BLE001
            waiter.resolve(Reply(False, err_code="BADFRAME", err_text=str(e)))
            return
        if self.decl_for(manifest.capability) is None:
            waiter.resolve(Reply(False, err_code="BADFRAME",
                                 err_text=f"capability {manifest.capability.value} not on node"))
            return
        slot = _Slot(manifest)
        self.slots[index] = slot
        self._debit_command()
        delay = max(0, self.delays.deploy_ms(len(cmd.manifest or b"")) + self._jitter())

        def installed():
            slot.installing = False
            waiter.resolve(Reply(True, index))

        self.engine.schedule(delay, installed, rank=RANK_NODE,
                             key=(self.config.node_id, index),
                             label=f"deploy:{self.config.node_id}/{index}")

    def _slot_or_err(self, cmd: Command, waiter: Waiter) -> tuple[int, _Slot] | None:
        index = cmd.slot if cmd.slot is not None else 0
        if not 0 <= index < len(self.slots) or self.slots[index] is None:
            waiter.resolve(Reply(False, err_code="NOSLOT", err_text=f"slot {index} empty"))
            return None
        return index, self.slots[index]

    def _op_start(self, cmd: Command, waiter: Waiter) -> None:
        found = self._slot_or_err(cmd, waiter)
        if found is None:
            return
        index, slot = found
        if slot.installing or slot.frozen or slot.running:
            waiter.resolve(Reply(False, err_code="BADFRAME", err_text="slot not startable"))
            return
        self._debit_command()
        delay = max(0, self.delays.start_sync_ms + self._jitter())

        def started():
            if self.slots[index] is not slot:
                waiter.resolve(Reply(False, err_code="NOSLOT", err_text="slot vanished"))
                return
            slot.running = True
            slot.anchor_ms = self.engine.now()
            slot.cadence_k = 1
            self._schedule_sample(index, slot)
            self._changed()
            waiter.resolve(Reply(True, index))

        self.engine.schedule(delay, started, rank=RANK_NODE,
                             key=(self.config.node_id, index),
                             label=f"start:{self.config.node_id}/{index}")

    def _op_stop(self, cmd: Command, waiter: Waiter) -> None:
        found = self._slot_or_err(cmd, waiter)
        if found is None:
            return
        index, slot = found
        if not slot.running:
            waiter.resolve(Reply(False, err_code="BADFRAME", err_text="slot not running"))
            return
        slot.running = False
        if slot.sample_event is not None:
            self.engine.cancel(slot.sample_event)
            slot.sample_event = None
        self._debit_command()
        waiter.resolve(Reply(True, index, payload=str(slot.next_seq - 1).encode("ascii")))

    def _op_delete(self, cmd: Command, waiter: Waiter) -> None:
        found = self._slot_or_err(cmd, waiter)
        if found is None:
            return
        index, slot = found
        if slot.running and not slot.frozen:
            # A frozen slot is not sampling; freeing it commits a handover.
            waiter.resolve(Reply(False, err_code="BADFRAME", err_text="stop before delete"))
            return
        if slot.sample_event is not None:
            self.engine.cancel(slot.sample_event)
        self.slots[index] = None
        self._debit_command()
        waiter.resolve(Reply(True, index))

    def _op_state(self, cmd: Command, waiter: Waiter) -> None:
        found = self._slot_or_err(cmd, waiter)
        if found is None:
            return
        index, slot = found
        self._debit_command()
        payload = f"{int(slot.running)} {slot.next_seq}".encode("ascii")
        waiter.resolve(Reply(True, index, payload=payload))

    def _op_migout(self, cmd: Command, waiter: Waiter) -> None:
        if self.config.platform != "SPOTSIM":
            waiter.resolve(Reply(False, err_code="UNSUPPORTED", err_text="platform cannot migrate"))
            return
        found = self._slot_or_err(cmd, waiter)
        if found is None:
            return
        index, slot = found
        if slot.installing or slot.frozen:
            waiter.resolve(Reply(False, err_code="BADFRAME", err_text="slot not extractable"))
            return
        state = serialize_slot_state(slot)
        slot.frozen = True
        if slot.sample_event is not None:
            self.engine.cancel(slot.sample_event)
            slot.sample_event = None
        payload = json.dumps(
            {"manifest": (slot.manifest.serialize()).decode("utf-8"), "state": state.decode("utf-8")},
            sort_keys=True,
        ).encode("utf-8")
        self._debit_command()
        waiter.resolve(Reply(True, index, payload=payload))

    def _op_migin(self, cmd: Command, waiter: Waiter) -> None:
        if self.config.platform != "SPOTSIM":
            waiter.resolve(Reply(False, err_code="UNSUPPORTED", err_text="platform cannot migrate"))
            return
        try:
            manifest = TaskManifest.parse(cmd.manifest or b"")
            state = json.loads((cmd.state or b"{}").decode("utf-8"))
            next_seq = int(state["next_seq"])
            running = bool(state["running"])
            anchor_ms = int(state["anchor_ms"])
            cadence_k = int(state["cadence_k"])
        except Exception as e:  # noqa: BLE001
            waiter.resolve(Reply(False, err_code="BADFRAME", err_text=f"bad migration state: {e}"))
            return
        # Re-installing into a frozen slot restores an aborted handover.
        if cmd.slot is not None and 0 <= cmd.slot < len(self.slots) \
                and self.slots[cmd.slot] is not None and self.slots[cmd.slot].frozen:
            index, slot = cmd.slot, self.slots[cmd.slot]
            slot.frozen = False
        else:
            index, err = self._pick_slot(cmd.slot)
            if err is not None:
                waiter.resolve(err)
                return
            if self.decl_for(manifest.capability) is None:
                waiter.resolve(Reply(False, err_code="BADFRAME",
                                     err_text=f"capability {manifest.capability.value} not on node"))
                return
            slot = _Slot(manifest)
            slot.installing = False
            self.slots[index] = slot
        slot.next_seq = next_seq
        slot.anchor_ms = anchor_ms
        slot.cadence_k = cadence_k
        slot.running = running
        if running:
            self._schedule_sample(index, slot)
        self._debit_command()
        waiter.resolve(Reply(True, index))

    # -- sampling ------------------------------------------------------------------

    def _schedule_sample(self, index: int, slot: _Slot) -> None:
        due = slot.anchor_ms + slot.cadence_k * slot.manifest.sampling_interval_ms
        due = max(due, self.engine.now())
        slot.sample_event = self.engine.schedule_at(
            due, lambda: self._fire_sample(index, slot), rank=RANK_NODE,
            key=(self.config.node_id, index), label=f"sample:{self.config.node_id}/{index}")

    def _fire_sample(self, index: int, slot: _Slot) -> None:
        slot.sample_event = None
        if not slot.running or slot.frozen or self.slots[index] is not slot:
            return
        now = self.engine.now()
        if not self.config.duty_cycle.awake(now):
            # Defer the emission to the next awake edge; cadence index is kept.
            edge = self.config.duty_cycle.next_awake_edge(now)
            slot.sample_event = self.engine.schedule_at(
                edge, lambda: self._fire_sample(index, slot), rank=RANK_NODE,
                key=(self.config.node_id, index), label=f"sample:{self.config.node_id}/{index}")
            return
        if not self._has_energy():
            log.info("node %s slot %d out of energy; sampling halted", self.config.node_id, index)
            self._changed()
            return
        decl = self.decl_for(slot.manifest.capability)
        value = sig.sample_value(decl.signal, now)
        # The raw signal is in the node's native unit (first declared);
        # emit in the manifest unit.
        if slot.manifest.unit is not decl.units[0]:
            value = convert_unit(value, decl.units[0], slot.manifest.unit)
        if slot.manifest.passes_threshold(value):
            msg = DataMessage(index, slot.next_seq, now, value, slot.manifest.unit)
            slot.next_seq += 1
            self.samples_emitted += 1
            self.emitted.append(msg)
            frame = self.codec.encode_data(msg)
            if self.config.platform == "MOTESIM":
                frame = wrap_gto(self.config.node_id, frame)
            self._deliver(slot.manifest.endpoint, frame)
            self._changed()
        slot.cadence_k += 1
        self._schedule_sample(index, slot)
