"""Smart-home end-to-end scenario.

Two appliances, two rules: cooling should engage when temperature rises
above a threshold, deck lights when ambient light falls below one. The
scenario discovers both capabilities over REST, creates one thresholded VS
per rule pointing at this process's data listener, drives the virtual
clock through a full signal period, and checks the received events against
the analytic crossing times of the configured sine signals: every
"entering" event must sit within one sampling interval after a true
crossing.

Along the way it touches every control-plane endpoint (detail lookups,
migration, scheduling plus cancel, stop, delete, metrics), so a clean exit
means the whole surface answered 2xx.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ScenarioFailure
from ..model import Capability, SignalParams, Unit
from ..sim.world import load_topology
from .client import ApiClient, DataListener, ReceivedData
from .stats import format_number

log = logging.getLogger(__name__)

SAMPLING_INTERVAL_MS = 5_000

EVENTS_CSV_HEADER = "vs,seq,ts_ms,value,entering\n"


@dataclass
class VsPlan:
    label: str
    capability: Capability
    unit: Unit
    signal: SignalParams
    threshold: float
    comparator: str
    listener: DataListener
    vs_id: str = ""
    node_id: str = ""
    events: list[ReceivedData] = field(default_factory=list)
    entering: list[ReceivedData] = field(default_factory=list)


@dataclass
class ScenarioReport:
    plans: list[VsPlan]
    lines: list[str] = field(default_factory=list)

    def render(self) -> str:
        return "\n".join(self.lines) + "\n"

    def events_csv(self) -> str:
        out = [EVENTS_CSV_HEADER.strip()]
        for plan in sorted(self.plans, key=lambda p: p.label):
            entering_ts = {e.message.ts_ms for e in plan.entering}
            for ev in sorted(plan.events, key=lambda e: e.message.seq):
                m = ev.message
                out.append(f"{plan.label},{m.seq},{m.ts_ms},"
                           f"{format_number(m.value)},{int(m.ts_ms in entering_ts)}")
        return "\n".join(out) + "\n"


def crossing_in_window(signal: SignalParams, threshold: float, comparator: str,
                       lo_ms: float, hi_ms: float, eps_ms: float = 1e-6) -> bool:
    """True when an analytic entering-crossing of the sine lies in (lo, hi];
    eps absorbs float round-off when a crossing lands exactly on a sample."""
    if signal.amplitude == 0:
        return False
    s = (threshold - signal.base) / signal.amplitude
    if not -1.0 < s < 1.0:
        return False
    period = signal.period_ms
    if comparator == "gt":
        phase = math.asin(s)  # rising edge
    else:
        phase = math.pi - math.asin(s)  # falling edge
    t0 = phase * period / (2.0 * math.pi)
    k = math.floor((hi_ms + eps_ms - t0) / period)
    t = t0 + k * period
    return lo_ms < t <= hi_ms + eps_ms


def find_entering(events: list[ReceivedData], interval_ms: int) -> list[ReceivedData]:
    """Events that begin a satisfied run (spacing within a run equals the
    sampling interval exactly)."""
    entering = []
    prev_ts = None
    for ev in sorted(events, key=lambda e: e.message.seq):
        if prev_ts is None or ev.message.ts_ms - prev_ts > interval_ms:
            entering.append(ev)
        prev_ts = ev.message.ts_ms
    return entering


class SmartHomeScenario:
    def __init__(self, client: ApiClient, topology_path: str | Path,
                 negative_control: bool = False):
        self.client = client
        self.negative = negative_control
        _, self.node_configs = load_topology(topology_path)
        self.report = ScenarioReport(plans=[])

    def _say(self, text: str) -> None:
        self.report.lines.append(text)
        log.info("%s", text)

    def _check(self, condition: bool, what: str) -> None:
        if not condition:
            raise ScenarioFailure(what)

    def _signal_for(self, capability: Capability) -> SignalParams:
        for cfg in self.node_configs:
            for decl in cfg.capabilities:
                if decl.capability is capability:
                    return decl.signal
        raise ScenarioFailure(f"topology has no {capability.value} node")

    def _plan(self, label: str, capability: Capability, unit: Unit) -> VsPlan:
        signal = self._signal_for(capability)
        if capability is Capability.TEMPERATURE:
            comparator = "gt"
            threshold = signal.base + signal.amplitude / 2.0
            if self.negative:
                threshold = signal.base + 2.0 * signal.amplitude
        else:
            comparator = "lt"
            threshold = signal.base - 0.75 * signal.amplitude
            if self.negative:
                threshold = signal.base - 2.0 * signal.amplitude
        return VsPlan(label, capability, unit, signal, threshold, comparator, DataListener())

    def run(self) -> ScenarioReport:
        plans = [
            self._plan("temperature", Capability.TEMPERATURE, Unit.CELSIUS),
            self._plan("light", Capability.LIGHT, Unit.LUX),
        ]
        self.report.plans = plans
        try:
            return self._run(plans)
        finally:
            for plan in plans:
                plan.listener.close()

    @staticmethod
    def _settle(plans: list[VsPlan], idle_s: float = 0.3, timeout_s: float = 10.0) -> None:
        """Wait until no listener has seen new frames for a beat (delivery
        crosses real sockets, so arrival lags the virtual clock)."""
        import time as _time

        deadline = _time.monotonic() + timeout_s
        last: list[int] | None = None
        last_change = _time.monotonic()
        while _time.monotonic() < deadline:
            counts = [len(p.listener.events()) for p in plans]
            if counts != last:
                last = counts
                last_change = _time.monotonic()
            elif _time.monotonic() - last_change >= idle_s:
                return
            _time.sleep(0.02)

    def _run(self, plans: list[VsPlan]) -> ScenarioReport:
        c = self.client
        period = max(p.signal.period_ms for p in plans)

        for plan in plans:
            found = c.sensors(capability=plan.capability.value, available=True)
            self._check(bool(found), f"no available {plan.label} sensor discovered")
            detail = c.sensor(found[0]["node_id"])
            self._say(f"discovered {len(found)} {plan.label} sensor(s); "
                      f"first={detail['node_id']} ({detail['platform']})")

            created = c.create_vs({
                "app_id": "smart-home",
                "query": {"capability": plan.capability.value, "unit": plan.unit.value},
                "task": {
                    "capability": plan.capability.value,
                    "sampling_interval_ms": SAMPLING_INTERVAL_MS,
                    "unit": plan.unit.value,
                    "endpoint": plan.listener.endpoint,
                    "threshold": plan.threshold,
                    "comparator": plan.comparator,
                },
            })
            plan.vs_id = created["vs_id"]
            plan.node_id = created["node_id"]
            view = c.vs(plan.vs_id)
            self._check(view["state"] == "Running", f"{plan.label} VS not running after create")
            self._say(f"{plan.label} VS {created['global_address']} on {plan.node_id}, "
                      f"rule {plan.comparator} {format_number(plan.threshold)}")

        self._say(f"advancing one full signal period ({period} ms)")
        c.advance(period)

        self._settle(plans)
        for plan in plans:
            plan.events = plan.listener.events()
            plan.entering = find_entering(plan.events, SAMPLING_INTERVAL_MS)
            self._say(f"{plan.label}: {len(plan.events)} event(s), "
                      f"{len(plan.entering)} entering")

        if self.negative:
            for plan in plans:
                self._check(not plan.events,
                            f"{plan.label} emitted {len(plan.events)} events with an "
                            "out-of-range threshold")
            self._say("negative control: no events, as expected")
        else:
            for plan in plans:
                self._check(len(plan.events) >= 1, f"no {plan.label} events delivered")
                self._check(len(plan.entering) >= 1, f"no {plan.label} threshold crossing seen")
                for ev in plan.entering:
                    ts = ev.message.ts_ms
                    self._check(
                        crossing_in_window(plan.signal, plan.threshold, plan.comparator,
                                           ts - SAMPLING_INTERVAL_MS, ts),
                        f"{plan.label} event at {ts} has no analytic crossing within "
                        f"one sampling interval")
                self._say(f"{plan.label}: every entering event within one interval "
                          "of an analytic crossing")

        # Exercise the rest of the control plane: migrate the temperature VS
        # to another capable node, schedule-and-cancel a stop, then clean up.
        temp = plans[0]
        others = [n["node_id"] for n in self.client.sensors(capability=temp.capability.value)
                  if n["node_id"] != temp.node_id and n["platform"] == "SPOTSIM"]
        self._check(bool(others), "no migration target for the temperature VS")
        moved = c.migrate_vs(temp.vs_id, others[0])
        self._say(f"migrated temperature VS to {moved['node_id']} slot {moved['slot']}")
        c.advance(2 * SAMPLING_INTERVAL_MS)

        now = c.clock()["now_ms"]
        sid = c.schedule({"action": "stop", "vs_id": temp.vs_id, "due_ms": now + 60_000})
        c.cancel_schedule(sid["schedule_id"])
        self._say("scheduled a deferred stop and cancelled it")

        for plan in plans:
            c.stop_vs(plan.vs_id)
            c.delete_vs(plan.vs_id)
        metrics = c.metrics()
        self._say(f"counters: {metrics['counters']}")
        self._say("scenario complete: all assertions passed")
        return self.report


def run_smart_home(client: ApiClient, topology_path: str | Path,
                   negative_control: bool = False) -> ScenarioReport:
    return SmartHomeScenario(client, topology_path, negative_control).run()
