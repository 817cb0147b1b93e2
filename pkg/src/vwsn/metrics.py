"""Lifecycle metrics: creation-delay and start-time samples plus counters.

Creation delay is measured server-side on the virtual clock as
(creation-complete - request-received); start time analogously for start
requests. Counters only ever grow.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Metrics:
    creates: int = 0
    starts: int = 0
    stops: int = 0
    deletes: int = 0
    migrations: int = 0
    failures: int = 0
    vscd_samples: list[tuple[str, int]] = field(default_factory=list)
    vsst_samples: list[tuple[str, int]] = field(default_factory=list)

    def record_vscd(self, vs_id: str, delay_ms: int) -> None:
        self.vscd_samples.append((vs_id, delay_ms))

    def record_vsst(self, vs_id: str, delay_ms: int) -> None:
        self.vsst_samples.append((vs_id, delay_ms))

    def view(self) -> dict:
        return {
            "counters": {
                "creates": self.creates,
                "starts": self.starts,
                "stops": self.stops,
                "deletes": self.deletes,
                "migrations": self.migrations,
                "failures": self.failures,
            },
            "vscd_ms": [{"vs_id": v, "value_ms": ms} for v, ms in self.vscd_samples],
            "vsst_ms": [{"vs_id": v, "value_ms": ms} for v, ms in self.vsst_samples],
        }
