"""REST layer: endpoint contracts, error mapping, concurrent creation."""

import concurrent.futures

import pytest
from fastapi.testclient import TestClient

import vwsn.errors as errors_module
from vwsn.api import ERROR_STATUS, build_app
from vwsn.errors import VwsnError
from vwsn.profiles import DelayProfile, ScenarioConfig
from vwsn.service import Service

ALLOWED_STATUSES = {400, 404, 409, 422, 503}

ZERO = ScenarioConfig(delays=DelayProfile(
    base_station_setup_ms=0, build_ms=0, per_kb_ms=0, sync_ms=0, start_sync_ms=0))


def topology(nodes):
    return {"version": 1, "iaas_id": "t", "nodes": nodes}


def spot(node_id, capacity=4, battery_j=100.0, capability="temperature",
         units=("celsius",), lat=45.5, lon=-73.6):
    return {
        "node_id": node_id, "platform": "SPOTSIM",
        "location": {"lat": lat, "lon": lon},
        "battery_j": battery_j, "capacity": capacity,
        "capabilities": [{
            "capability": capability, "units": list(units),
            "sampling_interval_ms": {"min": 100, "max": 600000},
            "signal": {"base": 21.0, "amplitude": 2.0, "period_ms": 60000,
                       "noise_sigma": 0.0, "seed": 5},
        }],
    }


@pytest.fixture
def service():
    svc = Service.build(topology([spot("n1"), spot("n2", capacity=2)]), scenario=ZERO)
    svc.start()
    yield svc
    svc.stop()


@pytest.fixture
def client(service):
    with TestClient(build_app(service)) as c:
        yield c


def create_body(node_id=None, query=None, start_at_ms=None, threshold=None, comparator=None):
    body = {
        "app_id": "app-1",
        "task": {"capability": "temperature", "sampling_interval_ms": 1000,
                 "unit": "celsius", "endpoint": "127.0.0.1:1"},
    }
    if threshold is not None:
        body["task"]["threshold"] = threshold
        body["task"]["comparator"] = comparator
    if node_id:
        body["node_id"] = node_id
    if query is not None:
        body["query"] = query
    if start_at_ms is not None:
        body["start_at_ms"] = start_at_ms
    return body


class TestErrorMapping:
    def test_every_module_error_is_mapped_once(self):
        codes = {cls.code for name, cls in vars(errors_module).items()
                 if isinstance(cls, type) and issubclass(cls, VwsnError)
                 and cls is not VwsnError
                 # harness-side conditions never travel over this wire
                 and cls.code not in {"SERVICE_UNREACHABLE", "INSUFFICIENT_ITERATIONS",
                                      "INSUFFICIENT_DATA", "SCENARIO_FAILURE"}}
        assert codes <= set(ERROR_STATUS), f"unmapped: {codes - set(ERROR_STATUS)}"
        assert set(ERROR_STATUS.values()) <= ALLOWED_STATUSES

    def test_error_body_shape(self, client):
        resp = client.get("/v1/sensors/ghost")
        assert resp.status_code == 404
        body = resp.json()
        assert body["error"] == "UNKNOWN_NODE" and "message" in body


class TestSensors:
    def test_empty_registry_empty_list(self):
        svc = Service.build(topology([]), scenario=ZERO)
        svc.start()
        try:
            with TestClient(build_app(svc)) as c:
                resp = c.get("/v1/sensors")
                assert resp.status_code == 200 and resp.json() == []
        finally:
            svc.stop()

    def test_list_and_filters(self, client):
        assert len(client.get("/v1/sensors").json()) == 2
        assert len(client.get("/v1/sensors", params={"capability": "temperature"}).json()) == 2
        assert client.get("/v1/sensors", params={"capability": "light"}).json() == []

    def test_bad_query_is_400(self, client):
        resp = client.get("/v1/sensors", params={"radius_m": 100})
        assert resp.status_code == 400
        assert resp.json()["error"] == "INVALID_QUERY"

    def test_detail_and_404(self, client):
        assert client.get("/v1/sensors/n1").status_code == 200
        assert client.get("/v1/sensors/ghost").status_code == 404


class TestVsLifecycle:
    def test_create_get_start_stop_delete(self, client):
        created = client.post("/v1/vs", json=create_body(node_id="n1")).json()
        assert created["state"] == "Running"
        vs_id = created["vs_id"]
        view = client.get(f"/v1/vs/{vs_id}").json()
        assert view["node_id"] == "n1" and view["slot"] == 0
        assert view["global_address"].startswith("vs://t/")

        assert client.post(f"/v1/vs/{vs_id}/stop").json()["state"] == "Stopped"
        resp = client.post(f"/v1/vs/{vs_id}/stop")
        assert resp.status_code == 409
        assert resp.json()["error"] == "ILLEGAL_TRANSITION"
        assert client.post(f"/v1/vs/{vs_id}/start").json()["state"] == "Running"
        assert client.delete(f"/v1/vs/{vs_id}").status_code == 204
        assert client.delete(f"/v1/vs/{vs_id}").status_code == 404
        assert client.get(f"/v1/vs/{vs_id}").status_code == 404

    def test_create_by_query_503_when_no_match(self, client):
        body = create_body(query={"capability": "light"})
        body["task"]["capability"] = "light"
        body["task"]["unit"] = "lux"
        resp = client.post("/v1/vs", json=body)
        assert resp.status_code == 503
        assert resp.json()["error"] == "NO_CANDIDATE_NODE"

    def test_create_validation_422(self, client):
        bad = create_body(node_id="n1")
        bad["task"]["sampling_interval_ms"] = 10  # below the node minimum
        resp = client.post("/v1/vs", json=bad)
        assert resp.status_code == 422
        assert resp.json()["error"] == "INTERVAL_OUT_OF_RANGE"
        missing = {"app_id": "x"}
        assert client.post("/v1/vs", json=missing).status_code == 422

    def test_both_selectors_rejected(self, client):
        body = create_body(node_id="n1", query={"capability": "temperature"})
        resp = client.post("/v1/vs", json=body)
        assert resp.status_code == 422
        assert resp.json()["error"] == "INVALID_PARAMS"

    def test_migrate_endpoint(self, client):
        created = client.post("/v1/vs", json=create_body(node_id="n1")).json()
        resp = client.post(f"/v1/vs/{created['vs_id']}/migrate",
                           json={"target_node_id": "n2"})
        assert resp.status_code == 200
        assert resp.json()["node_id"] == "n2"
        resp = client.post(f"/v1/vs/{created['vs_id']}/migrate",
                           json={"target_node_id": "ghost"})
        assert resp.status_code == 503
        assert resp.json()["error"] == "NODE_UNREACHABLE"

    def test_delete_running_stops_first(self, client):
        created = client.post("/v1/vs", json=create_body(node_id="n1")).json()
        assert created["state"] == "Running"
        assert client.delete(f"/v1/vs/{created['vs_id']}").status_code == 204


class TestSchedule:
    def test_schedule_start_fires_on_clock(self, client):
        now = client.get("/v1/clock").json()["now_ms"]
        created = client.post("/v1/vs",
                              json=create_body(node_id="n1", start_at_ms=now + 5000)).json()
        assert created["state"] == "Deployed"
        sid = created["schedule_id"]
        client.post("/v1/clock/advance", json={"dt_ms": 5000})
        assert client.get(f"/v1/vs/{created['vs_id']}").json()["state"] == "Running"
        resp = client.delete(f"/v1/schedule/{sid}")
        assert resp.status_code == 409  # already fired

    def test_schedule_cancel(self, client):
        now = client.get("/v1/clock").json()["now_ms"]
        created = client.post("/v1/vs",
                              json=create_body(node_id="n1", start_at_ms=now + 5000)).json()
        assert client.delete(f"/v1/schedule/{created['schedule_id']}").status_code == 204
        client.post("/v1/clock/advance", json={"dt_ms": 6000})
        assert client.get(f"/v1/vs/{created['vs_id']}").json()["state"] == "Deployed"

    def test_schedule_validation(self, client):
        assert client.post("/v1/schedule",
                           json={"action": "stop", "due_ms": 10**9}).status_code == 422
        assert client.delete("/v1/schedule/12345").status_code == 404
        now = client.get("/v1/clock").json()["now_ms"]
        resp = client.post("/v1/schedule",
                           json={"action": "nonsense", "due_ms": now + 10, "vs_id": "x"})
        assert resp.status_code == 422

    def test_scheduled_stop_via_endpoint(self, client):
        created = client.post("/v1/vs", json=create_body(node_id="n1")).json()
        now = client.get("/v1/clock").json()["now_ms"]
        sid = client.post("/v1/schedule", json={
            "action": "stop", "vs_id": created["vs_id"], "due_ms": now + 1000}).json()
        client.post("/v1/clock/advance", json={"dt_ms": 1000})
        assert client.get(f"/v1/vs/{created['vs_id']}").json()["state"] == "Stopped"


class TestMetricsAndSession:
    def test_metrics_counters_grow(self, client):
        before = client.get("/v1/metrics").json()["counters"]
        created = client.post("/v1/vs", json=create_body(node_id="n1")).json()
        client.post(f"/v1/vs/{created['vs_id']}/stop")
        client.delete(f"/v1/vs/{created['vs_id']}")
        after = client.get("/v1/metrics").json()["counters"]
        assert after["creates"] == before["creates"] + 1
        assert after["stops"] == before["stops"] + 1
        assert after["deletes"] == before["deletes"] + 1
        vscd = client.get("/v1/metrics").json()["vscd_ms"]
        assert any(row["vs_id"] == created["vs_id"] for row in vscd)

    def test_session_endpoints(self, client):
        assert client.post("/v1/session").status_code == 201
        assert client.delete("/v1/session").status_code == 204


class TestConcurrentCreation:
    def test_parallel_creates_fill_exactly_the_free_slots(self):
        svc = Service.build(topology([spot("n1", capacity=4), spot("n2", capacity=4)]),
                            scenario=ZERO)
        svc.start()
        try:
            with TestClient(build_app(svc)) as c:
                def one(_):
                    return c.post("/v1/vs", json=create_body(
                        query={"capability": "temperature"}))

                with concurrent.futures.ThreadPoolExecutor(max_workers=32) as pool:
                    responses = list(pool.map(one, range(32)))
                ok = [r for r in responses if r.status_code == 201]
                errors = [r for r in responses if r.status_code == 503]
                assert len(ok) == 8
                assert len(errors) == 24
                assigned = [(r.json()["vs_id"]) for r in ok]
                slots = set()
                for r in ok:
                    view = c.get(f"/v1/vs/{r.json()['vs_id']}").json()
                    slots.add((view["node_id"], view["slot"]))
                assert len(slots) == 8
        finally:
            svc.stop()
