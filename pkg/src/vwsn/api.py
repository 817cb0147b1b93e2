"""RESTful IaaS access/control interface (v1).

Endpoint summary (JSON bodies):

    GET    /v1/sensors?capability=&unit=&lat=&lon=&radius_m=&max_interval_ms=&available=&min_battery=
    GET    /v1/sensors/{node_id}
    POST   /v1/vs                      -> 201 {vs_id, global_address, node_id, state[, schedule_id]}
    GET    /v1/vs/{vs_id}
    POST   /v1/vs/{vs_id}/start       -> 200 {state}
    POST   /v1/vs/{vs_id}/stop        -> 200 {state}
    POST   /v1/vs/{vs_id}/migrate     -> 200 {node_id, slot}
    DELETE /v1/vs/{vs_id}             -> 204 (running VSs are stopped first)
    POST   /v1/schedule               -> 201 {schedule_id}
    DELETE /v1/schedule/{id}          -> 204
    GET    /v1/metrics
    POST   /v1/session                -> 201 (establish shared base-station session)
    DELETE /v1/session                -> 204 (tear it down; next create re-establishes)
    POST   /v1/clock/advance          -> 200 {now_ms} (drive the virtual clock)
    GET    /v1/clock                  -> 200 {now_ms}

Every module error maps to exactly one (HTTP status, code) pair via
ERROR_STATUS; bodies are {"error": code, "message": text}.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .errors import InvalidParams, InvalidQuery, VwsnError
from .model import Capability, GeoPoint, Unit, VirtualSensorRecord
from .provisioning import CreateRequest, TaskParams
from .registry import DiscoveryQuery, SensorDescription
from .service import Service

log = logging.getLogger(__name__)

ERROR_STATUS: dict[str, int] = {
    "ILLEGAL_TRANSITION": 409,
    "ALREADY_BOUND": 409,
    "NOT_BOUND": 409,
    "INCOMPATIBLE_UNITS": 422,
    "INVALID_CONFIG": 422,
    "DUPLICATE_NODE_ID": 409,
    "CAPACITY": 503,
    "ENERGY": 503,
    "BADFRAME": 503,
    "QUEUEFULL": 503,
    "UNSUPPORTED": 422,
    "NOSLOT": 404,
    "UNKNOWN_NODE": 404,
    "INVALID_QUERY": 400,
    "IO_FAILURE": 503,
    "CORRUPT_SNAPSHOT": 422,
    "NODE_CAPACITY": 503,
    "NODE_ENERGY": 503,
    "NODE_UNREACHABLE": 503,
    "PROTOCOL_ERROR": 503,
    "UNSUPPORTED_PLATFORM": 422,
    "TARGET_CAPACITY": 503,
    "TARGET_ENERGY": 503,
    "UNKNOWN_VS": 404,
    "NO_CANDIDATE_NODE": 503,
    "INVALID_PARAMS": 422,
    "UNSUPPORTED_CAPABILITY": 422,
    "INTERVAL_OUT_OF_RANGE": 422,
    "UNIT_UNSUPPORTED": 422,
    "PAST_DUE": 422,
    "UNKNOWN_SCHEDULE": 404,
    "ALREADY_FIRED": 409,
}


class QueryBody(BaseModel):
    capability: str | None = None
    unit: str | None = None
    lat: float | None = None
    lon: float | None = None
    radius_m: float | None = None
    max_interval_ms: int | None = None
    available: bool = False
    min_battery: float | None = None


class TaskBody(BaseModel):
    capability: str
    sampling_interval_ms: int
    unit: str
    endpoint: str
    threshold: float | None = None
    comparator: str | None = None


class CreateBody(BaseModel):
    app_id: str
    task: TaskBody
    node_id: str | None = None
    query: QueryBody | None = None
    start_at_ms: int | None = None


class MigrateBody(BaseModel):
    target_node_id: str


class ScheduleBody(BaseModel):
    action: str
    due_ms: int
    vs_id: str | None = None
    request: CreateBody | None = None
    node_id: str | None = None


class AdvanceBody(BaseModel):
    dt_ms: int = Field(gt=0)


def _query_from(body: QueryBody) -> DiscoveryQuery:
    try:
        capability = Capability(body.capability) if body.capability else None
        unit = Unit(body.unit) if body.unit else None
        center = GeoPoint(body.lat, body.lon) if body.lat is not None and body.lon is not None else None
    except ValueError as e:
        raise InvalidQuery(str(e)) from None
    if (body.lat is None) != (body.lon is None):
        raise InvalidQuery("lat and lon go together")
    return DiscoveryQuery(
        capability=capability,
        unit=unit,
        center=center,
        radius_m=body.radius_m,
        max_interval_ms=body.max_interval_ms,
        available_only=body.available,
        min_battery=body.min_battery,
    )


def _task_from(body: TaskBody) -> TaskParams:
    try:
        return TaskParams(
            capability=Capability(body.capability),
            sampling_interval_ms=body.sampling_interval_ms,
            unit=Unit(body.unit),
            endpoint=body.endpoint,
            threshold=body.threshold,
            comparator=body.comparator,
        )
    except ValueError as e:
        raise InvalidParams(str(e)) from None


def _request_from(body: CreateBody) -> CreateRequest:
    return CreateRequest(
        app_id=body.app_id,
        task=_task_from(body.task),
        node_id=body.node_id,
        query=_query_from(body.query) if body.query is not None else None,
        start_at_ms=body.start_at_ms,
    )


def _sensor_view(d: SensorDescription) -> dict:
    return {
        "node_id": d.node_id,
        "platform": d.platform,
        "protocol": d.protocol,
        "data_format": d.data_format,
        "location": {"lat": d.location.lat, "lon": d.location.lon},
        "capacity": d.capacity,
        "active_count": d.active_count,
        "load": d.load,
        "battery_fraction": d.battery_fraction,
        "available": d.available,
        "capabilities": [
            {
                "capability": c.capability.value,
                "units": [u.value for u in c.units],
                "min_interval_ms": c.min_interval_ms,
                "max_interval_ms": c.max_interval_ms,
            }
            for c in d.capabilities
        ],
    }


def _vs_view(r: VirtualSensorRecord) -> dict:
    return {
        "vs_id": r.vs_id,
        "global_address": r.global_addr.render(),
        "state": r.state.value,
        "app_id": r.app_id,
        "node_id": r.local.node_id if r.local else None,
        "slot": r.local.slot if r.local else None,
        "manifest": r.manifest_text,
        "created_at_ms": r.created_at_ms,
        "state_changed_at_ms": r.state_changed_at_ms,
        "last_seq": r.last_seq,
    }


def build_app(service: Service) -> FastAPI:
    app = FastAPI(title="vwsn-iaas", version="1")
    engine = service.engine
    provider = service.provider

    @app.exception_handler(VwsnError)
    async def vwsn_error_handler(request: Request, exc: VwsnError):
        status = ERROR_STATUS.get(exc.code, 500)
        if status == 500:
            log.error("unmapped error code %s: %s", exc.code, exc)
        service.metrics.failures += 1
        return JSONResponse(status_code=status,
                            content={"error": exc.code, "message": str(exc)})

    @app.exception_handler(RequestValidationError)
    async def validation_error_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422,
                            content={"error": "INVALID_PARAMS", "message": str(exc.errors())})

    @app.get("/v1/sensors")
    def list_sensors(capability: str | None = None, unit: str | None = None,
                     lat: float | None = None, lon: float | None = None,
                     radius_m: float | None = None, max_interval_ms: int | None = None,
                     available: bool = False, min_battery: float | None = None):
        q = _query_from(QueryBody(
            capability=capability, unit=unit, lat=lat, lon=lon, radius_m=radius_m,
            max_interval_ms=max_interval_ms, available=available, min_battery=min_battery))
        hits = engine.call(lambda: service.registry.query(q))
        return [_sensor_view(d) for d in hits]

    @app.get("/v1/sensors/{node_id}")
    def get_sensor(node_id: str):
        desc = engine.call(lambda: service.registry.get(node_id))
        return _sensor_view(desc)

    @app.post("/v1/vs", status_code=201)
    def create_vs(body: CreateBody):
        req = _request_from(body)
        record, schedule_id = engine.call(lambda: provider.handle_create(req))
        out = {
            "vs_id": record.vs_id,
            "global_address": record.global_addr.render(),
            "node_id": record.local.node_id if record.local else None,
            "state": record.state.value,
        }
        if schedule_id is not None:
            out["schedule_id"] = schedule_id
        return out

    @app.get("/v1/vs/{vs_id}")
    def get_vs(vs_id: str):
        record = engine.call(lambda: service.manager.record(vs_id))
        return _vs_view(record)

    @app.post("/v1/vs/{vs_id}/start")
    def start_vs(vs_id: str):
        record = engine.call(lambda: provider.start_vs(vs_id))
        return {"vs_id": vs_id, "state": record.state.value}

    @app.post("/v1/vs/{vs_id}/stop")
    def stop_vs(vs_id: str):
        record = engine.call(lambda: provider.stop_vs(vs_id))
        return {"vs_id": vs_id, "state": record.state.value}

    @app.post("/v1/vs/{vs_id}/migrate")
    def migrate_vs(vs_id: str, body: MigrateBody):
        record = engine.call(lambda: provider.migrate_vs(vs_id, body.target_node_id))
        return {"vs_id": vs_id, "state": record.state.value,
                "node_id": record.local.node_id, "slot": record.local.slot}

    @app.delete("/v1/vs/{vs_id}", status_code=204)
    def delete_vs(vs_id: str):
        engine.call(lambda: provider.delete_vs(vs_id, stop_first=True))
        return Response(status_code=204)

    @app.post("/v1/schedule", status_code=201)
    def schedule(body: ScheduleBody):
        req = _request_from(body.request) if body.request is not None else None
        sid = engine.call(lambda: provider.scheduler.schedule(
            body.action, body.due_ms, vs_id=body.vs_id, request=req, node_id=body.node_id))
        return {"schedule_id": sid}

    @app.delete("/v1/schedule/{schedule_id}", status_code=204)
    def cancel_schedule(schedule_id: int):
        engine.call(lambda: provider.scheduler.cancel(schedule_id))
        return Response(status_code=204)

    @app.get("/v1/metrics")
    def metrics():
        return engine.call(lambda: dict(service.metrics.view(), now_ms=engine.now()))

    @app.post("/v1/session", status_code=201)
    def establish_session():
        engine.call(lambda: service.manager.ensure_session())
        return {"established": True}

    @app.delete("/v1/session", status_code=204)
    def reset_session():
        engine.call(service.manager.reset_session)
        return Response(status_code=204)

    @app.post("/v1/clock/advance")
    def advance_clock(body: AdvanceBody):
        engine.advance(body.dt_ms)
        return {"now_ms": engine.now()}

    @app.get("/v1/clock")
    def get_clock():
        return {"now_ms": engine.now()}

    return app
