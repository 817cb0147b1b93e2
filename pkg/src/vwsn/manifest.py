"""Canonical task manifests.

A manifest is the parameter document a node reads to run its task: UTF-8
``key=value`` lines, keys sorted ascending, LF endings. Serialization is
canonical — equal parameter sets produce byte-identical documents, which is
what makes deploy payloads and their sizes reproducible.

Keys: ``vs_id``, ``capability``, ``sampling_interval_ms``, ``unit``,
``endpoint``, plus ``threshold`` and ``comparator`` when a threshold rule is
attached (both or neither).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import BadFrame
from .model import Capability, Unit

REQUIRED_KEYS = ("capability", "endpoint", "sampling_interval_ms", "unit", "vs_id")
OPTIONAL_KEYS = ("comparator", "threshold")
COMPARATORS = ("gt", "lt")


def format_number(x: float) -> str:
    """Shortest round-trip decimal; integral values render without a dot."""
    if x == int(x) and abs(x) < 2**53:
        return str(int(x))
    return repr(float(x))


@dataclass(frozen=True)
class TaskManifest:
    vs_id: str
    capability: Capability
    sampling_interval_ms: int
    unit: Unit
    endpoint: str
    threshold: float | None = None
    comparator: str | None = None

    def __post_init__(self):
        if (self.threshold is None) != (self.comparator is None):
            raise ValueError("threshold and comparator go together")
        if self.comparator is not None and self.comparator not in COMPARATORS:
            raise ValueError(f"comparator must be one of {COMPARATORS}")
        if self.sampling_interval_ms <= 0:
            raise ValueError("sampling_interval_ms must be positive")
        if ":" not in self.endpoint:
            raise ValueError("endpoint must be host:port")

    def to_dict(self) -> dict[str, str]:
        d = {
            "vs_id": self.vs_id,
            "capability": self.capability.value,
            "sampling_interval_ms": str(self.sampling_interval_ms),
            "unit": self.unit.value,
            "endpoint": self.endpoint,
        }
        if self.threshold is not None:
            d["threshold"] = format_number(self.threshold)
            d["comparator"] = self.comparator or ""
        return d

    def serialize(self) -> bytes:
        d = self.to_dict()
        return "".join(f"{k}={d[k]}\n" for k in sorted(d)).encode("utf-8")

    @property
    def text(self) -> str:
        return self.serialize().decode("utf-8")

    @classmethod
    def parse(cls, raw: bytes) -> "TaskManifest":
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise BadFrame(f"manifest not UTF-8: {e}") from None
        pairs: dict[str, str] = {}
        for line in text.split("\n"):
            if not line:
                continue
            if "=" not in line:
                raise BadFrame(f"manifest line without '=': {line!r}")
            k, _, v = line.partition("=")
            if k in pairs:
                raise BadFrame(f"duplicate manifest key {k!r}")
            pairs[k] = v
        missing = [k for k in REQUIRED_KEYS if k not in pairs]
        if missing:
            raise BadFrame(f"manifest missing keys: {missing}")
        unknown = set(pairs) - set(REQUIRED_KEYS) - set(OPTIONAL_KEYS)
        if unknown:
            raise BadFrame(f"manifest has unknown keys: {sorted(unknown)}")
        try:
            return cls(
                vs_id=pairs["vs_id"],
                capability=Capability(pairs["capability"]),
                sampling_interval_ms=int(pairs["sampling_interval_ms"]),
                unit=Unit(pairs["unit"]),
                endpoint=pairs["endpoint"],
                threshold=float(pairs["threshold"]) if "threshold" in pairs else None,
                comparator=pairs.get("comparator"),
            )
        except (ValueError, KeyError) as e:
            raise BadFrame(f"bad manifest value: {e}") from None

    def passes_threshold(self, value: float) -> bool:
        """True when the sample should be emitted under the threshold rule."""
        if self.threshold is None:
            return True
        if self.comparator == "gt":
            return value > self.threshold
        return value < self.threshold
