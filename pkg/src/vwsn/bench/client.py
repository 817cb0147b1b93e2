"""REST client, embedded service host, and the data-endpoint listener."""

from __future__ import annotations

import socketserver
import threading
import time
from dataclasses import dataclass

import httpx
import uvicorn

from ..errors import ServiceUnreachable, VwsnError
from ..wire import DataMessage, MotesimCodec, SpotsimCodec, is_gto_frame

REQUEST_TIMEOUT_S = 60.0


class ApiError(VwsnError):
    """Non-2xx API answer; carries the service's machine code."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(f"{status} {code}: {message}")
        self.status = status
        self.code = code


class ApiClient:
    """Thin wrapper over the v1 REST interface."""

    def __init__(self, base_url: str, transport: httpx.BaseTransport | None = None):
        self.base_url = base_url.rstrip("/")
        self._http = httpx.Client(base_url=self.base_url, timeout=REQUEST_TIMEOUT_S,
                                  transport=transport)

    def close(self) -> None:
        self._http.close()

    def _req(self, method: str, path: str, *, ok=(200, 201, 204), **kwargs):
        try:
            resp = self._http.request(method, path, **kwargs)
        except httpx.TransportError as e:
            raise ServiceUnreachable(f"{method} {path}: {e}") from None
        if resp.status_code not in ok:
            try:
                body = resp.json()
            except ValueError:
                body = {"error": "INTERNAL", "message": resp.text}
            raise ApiError(resp.status_code, body.get("error", "INTERNAL"),
                           body.get("message", ""))
        if resp.status_code == 204 or not resp.content:
            return None
        return resp.json()

    # -- discovery ----------------------------------------------------------

    def sensors(self, **params):
        return self._req("GET", "/v1/sensors", params=params)

    def sensor(self, node_id: str):
        return self._req("GET", f"/v1/sensors/{node_id}")

    # -- lifecycle -----------------------------------------------------------

    def create_vs(self, body: dict):
        return self._req("POST", "/v1/vs", json=body)

    def vs(self, vs_id: str):
        return self._req("GET", f"/v1/vs/{vs_id}")

    def start_vs(self, vs_id: str):
        return self._req("POST", f"/v1/vs/{vs_id}/start")

    def stop_vs(self, vs_id: str):
        return self._req("POST", f"/v1/vs/{vs_id}/stop")

    def migrate_vs(self, vs_id: str, target_node_id: str):
        return self._req("POST", f"/v1/vs/{vs_id}/migrate",
                         json={"target_node_id": target_node_id})

    def delete_vs(self, vs_id: str):
        return self._req("DELETE", f"/v1/vs/{vs_id}")

    # -- scheduling, session, clock, metrics -----------------------------------

    def schedule(self, body: dict):
        return self._req("POST", "/v1/schedule", json=body)

    def cancel_schedule(self, schedule_id: int):
        return self._req("DELETE", f"/v1/schedule/{schedule_id}")

    def metrics(self):
        return self._req("GET", "/v1/metrics")

    def establish_session(self):
        return self._req("POST", "/v1/session")

    def reset_session(self):
        return self._req("DELETE", "/v1/session")

    def advance(self, dt_ms: int):
        return self._req("POST", "/v1/clock/advance", json={"dt_ms": dt_ms})

    def clock(self):
        return self._req("GET", "/v1/clock")

    def vscd_for(self, vs_id: str) -> int:
        for row in self.metrics()["vscd_ms"]:
            if row["vs_id"] == vs_id:
                return row["value_ms"]
        raise ApiError(404, "UNKNOWN_VS", f"no creation-delay sample for {vs_id}")

    def vsst_for(self, vs_id: str) -> int:
        for row in self.metrics()["vsst_ms"]:
            if row["vs_id"] == vs_id:
                return row["value_ms"]
        raise ApiError(404, "UNKNOWN_VS", f"no start-time sample for {vs_id}")


class EmbeddedService:
    """Self-hosted service for hermetic runs: real HTTP on a loopback port."""

    def __init__(self, topology, scenario=None):
        from ..api import build_app
        from ..service import Service

        self.service = Service.build(topology, scenario=scenario, forward_data=True)
        self.service.start()
        self._config = uvicorn.Config(build_app(self.service), host="127.0.0.1", port=0,
                                      log_level="warning", access_log=False)
        self._server = uvicorn.Server(self._config)
        self._thread = threading.Thread(target=self._server.run, daemon=True,
                                        name="vwsn-embedded-api")
        self._thread.start()
        deadline = time.monotonic() + 15.0
        while not self._server.started:
            if time.monotonic() > deadline or not self._thread.is_alive():
                raise ServiceUnreachable("embedded service failed to start")
            time.sleep(0.01)
        sock = self._server.servers[0].sockets[0]
        self.port = sock.getsockname()[1]
        self.base_url = f"http://127.0.0.1:{self.port}"

    def client(self) -> ApiClient:
        return ApiClient(self.base_url)

    def close(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)
        self.service.stop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass(frozen=True)
class ReceivedData:
    node_id: str | None  # known only for GTO-relayed frames
    message: DataMessage


class _DataHandler(socketserver.BaseRequestHandler):
    def handle(self):
        buf = b""
        while True:
            try:
                chunk = self.request.recv(4096)
            except OSError:
                return
            if not chunk:
                return
            buf += chunk
            buf = self.server.listener._consume(buf)  # type: ignore[attr-defined]


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class DataListener:
    """TCP endpoint accepting both data wire formats.

    Stream grammar per connection: UTF-8 ``DATA ...`` lines from capable
    nodes, or GTO-prefixed TLV data frames from constrained nodes.
    """

    def __init__(self):
        self._server = _Server(("127.0.0.1", 0), _DataHandler)
        self._server.listener = self
        self._lock = threading.Lock()
        self._events: list[ReceivedData] = []
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        daemon=True, name="vwsn-data-listener")
        self._thread.start()
        self.endpoint = "127.0.0.1:%d" % self._server.server_address[1]

    def _consume(self, buf: bytes) -> bytes:
        while buf:
            if buf[0:1].isupper():
                nl = buf.find(b"\n")
                if nl < 0:
                    return buf
                line, buf = buf[: nl + 1], buf[nl + 1 :]
                msg = SpotsimCodec.decode_data(line)
                self._push(ReceivedData(None, msg))
                continue
            if is_gto_frame(buf):
                n = buf[0]
                if len(buf) < 1 + n + 3:
                    return buf
                node_id = buf[1 : 1 + n].decode("utf-8")
                length = int.from_bytes(buf[2 + n : 4 + n], "big")
                end = 1 + n + 3 + length
                if len(buf) < end:
                    return buf
                msg = MotesimCodec.decode_data(buf[1 + n : end])
                buf = buf[end:]
                self._push(ReceivedData(node_id, msg))
                continue
            # bare TLV data frame
            if len(buf) < 3:
                return buf
            length = int.from_bytes(buf[1:3], "big")
            if len(buf) < 3 + length:
                return buf
            msg = MotesimCodec.decode_data(buf[: 3 + length])
            buf = buf[3 + length :]
            self._push(ReceivedData(None, msg))
        return buf

    def _push(self, item: ReceivedData) -> None:
        with self._lock:
            self._events.append(item)

    def events(self) -> list[ReceivedData]:
        with self._lock:
            return list(self._events)

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def wait_for(predicate, timeout_s: float = 5.0, poll_s: float = 0.01) -> bool:
    """Spin until predicate() is true (data travels over real sockets, so
    arrival lags the virtual clock by wall time)."""
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(poll_s)
    return predicate()
