"""Creation-delay and start-time experiments.

Two creation-delay variants:

* warm — the shared base-station session is established once up front and
  reused, so each iteration measures the bare creation path;
* cold — the session is torn down before every request, so each iteration
  additionally pays the session setup.

Start time is measured on explicit start requests against a VS deployed
with a deferred start. Every sample is read back from the service's
/v1/metrics view (measured server-side on the virtual clock) and written
as a CSV row ``iteration,metric,value_ms``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import InsufficientIterations
from ..profiles import ScenarioConfig
from .client import ApiClient
from .stats import ExperimentResult, format_number, summarize

log = logging.getLogger(__name__)

CSV_HEADER = "iteration,metric,value_ms\n"

# Deferred far enough that no bench VS ever auto-starts.
FAR_FUTURE_OFFSET_MS = 10**10


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str  # vscd_warm | vscd_cold | vsst
    iterations: int = 50
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    seed: int = 0
    node_id: str | None = None
    out_csv: str | Path | None = None

    def validate(self) -> None:
        if self.mode not in ("vscd_warm", "vscd_cold", "vsst"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.iterations < 2:
            raise InsufficientIterations(f"need >= 2 iterations, got {self.iterations}")


def _bench_create_body(client: ApiClient, node_id: str | None) -> dict:
    if node_id is None:
        candidates = client.sensors(capability="temperature")
        node_id = candidates[0]["node_id"]
    detail = client.sensor(node_id)
    decl = next(c for c in detail["capabilities"] if c["capability"] == "temperature")
    return {
        "app_id": "bench",
        "node_id": node_id,
        "task": {
            "capability": "temperature",
            "sampling_interval_ms": decl["min_interval_ms"],
            "unit": decl["units"][0],
            "endpoint": "127.0.0.1:1",
        },
    }


def write_csv(path: str | Path, rows: list[tuple[int, str, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(CSV_HEADER)
        for iteration, metric, value in rows:
            fh.write(f"{iteration},{metric},{format_number(value)}\n")


def read_csv(path: str | Path) -> list[tuple[int, str, float]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CSV_HEADER.strip():
        raise ValueError(f"unexpected CSV header in {path}")
    rows = []
    for line in lines[1:]:
        it, metric, value = line.split(",")
        rows.append((int(it), metric, float(value)))
    return rows


def run_vscd(client: ApiClient, cfg: ExperimentConfig) -> ExperimentResult:
    cfg.validate()
    metric = cfg.mode
    cold = cfg.mode == "vscd_cold"
    body = dict(_bench_create_body(client, cfg.node_id))
    if not cold:
        client.establish_session()
    rows: list[tuple[int, str, float]] = []
    for i in range(1, cfg.iterations + 1):
        if cold:
            client.reset_session()
        now = client.clock()["now_ms"]
        created = client.create_vs(dict(body, start_at_ms=now + FAR_FUTURE_OFFSET_MS))
        sample = client.vscd_for(created["vs_id"])
        client.delete_vs(created["vs_id"])
        rows.append((i, metric, sample))
    if cfg.out_csv:
        write_csv(cfg.out_csv, rows)
    return summarize(metric, [v for _, _, v in rows])


def run_vsst(client: ApiClient, cfg: ExperimentConfig) -> ExperimentResult:
    cfg.validate()
    body = dict(_bench_create_body(client, cfg.node_id))
    client.establish_session()
    rows: list[tuple[int, str, float]] = []
    for i in range(1, cfg.iterations + 1):
        now = client.clock()["now_ms"]
        created = client.create_vs(dict(body, start_at_ms=now + FAR_FUTURE_OFFSET_MS))
        if "schedule_id" in created:
            client.cancel_schedule(created["schedule_id"])
        client.start_vs(created["vs_id"])
        sample = client.vsst_for(created["vs_id"])
        client.stop_vs(created["vs_id"])
        client.delete_vs(created["vs_id"])
        rows.append((i, "vsst", sample))
    if cfg.out_csv:
        write_csv(cfg.out_csv, rows)
    return summarize("vsst", [v for _, _, v in rows])
