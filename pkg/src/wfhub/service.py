"""JSON-over-HTTP service under ``/api/v1/``.

Routes map one-to-one onto the operations used by the command line. Every
response body is ``{"ok": true, "data": ...}`` or ``{"ok": false, "error": ...}``.
Mutating requests may carry an ``Idempotency-Key`` header; a repeated key with
the same body replays the stored response, a repeated key with a different
body is a conflict.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from . import ops
from ._util import JsonlLog
from .errors import WfHubError
from .platform import Platform

PREFIX = "/api/v1"

STATUS = {
    "validation": 400,
    "not_found": 404,
    "conflict": 409,
    "cycle": 409,
    "invalid_transition": 409,
    "docking": 422,
    "contract": 422,
    "insufficient_data": 422,
    "undefined_correlation": 422,
    "degenerate_fit": 422,
    "no_resource": 503,
    "integrity": 500,
    "storage": 500,
}

# (method, path pattern, operation, names of path groups)
ROUTES = [
    ("POST", r"/project", "project.create"),
    ("GET", r"/project", "project.list"),
    ("POST", r"/datatype", "datatype.register"),
    ("GET", r"/datatype", "datatype.list"),
    ("POST", r"/data", "data.upload"),
    ("GET", r"/data", "data.query"),
    ("GET", r"/object/(?P<id>[^/]+)", "data.get"),
    ("POST", r"/object/(?P<id>[^/]+)/fetch", "data.fetch"),
    ("POST", r"/app", "app.register"),
    ("GET", r"/app", "app.list"),
    ("POST", r"/resource", "resource.register"),
    ("GET", r"/resource", "resource.list"),
    ("POST", r"/resource/(?P<id>[^/]+)/enable", "resource.enable"),
    ("POST", r"/resource/(?P<id>[^/]+)/monitor", "resource.monitor"),
    ("POST", r"/task", "task.submit"),
    ("GET", r"/task/(?P<id>[^/]+)", "task.status"),
    ("POST", r"/task/(?P<id>[^/]+)/stop", "task.stop"),
    ("GET", r"/task/(?P<id>[^/]+)/events", "task.events"),
    ("POST", r"/tick", "tick"),
    ("POST", r"/rule", "rule.define"),
    ("GET", r"/rule", "rule.list"),
    ("POST", r"/rule/run", "rule.run"),
    ("POST", r"/rule/(?P<rule>[^/]+)/rearm", "rule.rearm"),
    ("POST", r"/reference", "reference.build"),
    ("POST", r"/reference/classify", "reference.classify"),
    ("POST", r"/collate", "collate"),
    ("GET", r"/reproduce/(?P<object>[^/]+)", "reproduce"),
    ("GET", r"/provenance/(?P<object>[^/]+)", "provenance.graph"),
    ("POST", r"/pub", "pub.create"),
    ("POST", r"/sim", "sim.run"),
]
_COMPILED = [(m, re.compile(f"^{PREFIX}{p}/?$"), op) for m, p, op in ROUTES]


class Service:
    """Transport-free core of the HTTP service, usable directly in tests."""

    def __init__(self, platform: Platform):
        self.platform = platform
        self.lock = threading.RLock()
        self._idem_log = JsonlLog(platform.root / "service" / "idempotency.jsonl")
        self._idem: dict[str, dict] = {r["key"]: r for r in self._idem_log.read()}
        self._stop = threading.Event()
        self._loop: threading.Thread | None = None

    def route(self, method: str, path: str) -> tuple[str, dict] | None:
        for m, pattern, op in _COMPILED:
            if m == method:
                match = pattern.match(path)
                if match:
                    return op, match.groupdict()
        return None

    def handle(self, method: str, target: str, body: bytes = b"", headers: dict | None = None) -> tuple[int, dict]:
        headers = {k.lower(): v for k, v in (headers or {}).items()}
        url = urlparse(target)
        found = self.route(method, url.path)
        if found is None:
            known = any(p.match(url.path) for _, p, _ in _COMPILED)
            status = 405 if known else 404
            return status, _error("not_found" if status == 404 else "method_not_allowed", f"no route for {method} {url.path}")
        op, params = found
        if method == "GET":
            for k, v in parse_qs(url.query).items():
                params[k] = v if len(v) > 1 else v[0]
        elif body.strip():
            try:
                payload = json.loads(body)
            except json.JSONDecodeError as exc:
                return 400, _error("malformed_json", f"malformed JSON body: {exc}")
            if not isinstance(payload, dict):
                return 400, _error("malformed_json", "request body must be a JSON object")
            params = {**payload, **params}
        if op == "task.submit" and "user" not in params and "x-user-id" in headers:
            params["user"] = headers["x-user-id"]
        key = headers.get("idempotency-key") if op in ops.MUTATING else None
        fingerprint = hashlib.sha256(json.dumps([method, url.path, params], sort_keys=True, default=str).encode()).hexdigest()
        with self.lock:
            if key is not None and key in self._idem:
                prior = self._idem[key]
                if prior["fingerprint"] != fingerprint:
                    return 409, _error("conflict", f"idempotency key {key!r} reused with a different request")
                return prior["status"], prior["body"]
            status, response = self._execute(op, params)
            if key is not None:
                record = {"key": key, "fingerprint": fingerprint, "status": status, "body": response}
                self._idem_log.append(record)
                self._idem[key] = record
        return status, response

    def _execute(self, op: str, params: dict) -> tuple[int, dict]:
        try:
            data = ops.run(self.platform, op, params)
        except WfHubError as exc:
            return STATUS.get(exc.kind, 400), {"ok": False, "error": exc.to_dict()}
        except (ValueError, TypeError, OSError) as exc:
            return 400, _error("bad_request", str(exc))
        return 200, {"ok": True, "data": data}

    # -- scheduler loop ----------------------------------------------------

    def start_scheduler(self, tick_seconds: float | None = None) -> None:
        interval = self.platform.config.tick_seconds if tick_seconds is None else tick_seconds
        if not interval or interval <= 0:
            return

        def loop():
            while not self._stop.wait(interval):
                with self.lock:
                    self.platform.tick(1)

        self._loop = threading.Thread(target=loop, name="wfhub-scheduler", daemon=True)
        self._loop.start()

    def stop_scheduler(self) -> None:
        self._stop.set()
        if self._loop is not None:
            self._loop.join()


def _error(kind: str, message: str) -> dict:
    return {"ok": False, "error": {"kind": kind, "message": message}}


def make_handler(service: Service):
    class Handler(BaseHTTPRequestHandler):
        server_version = "wfhub/0.1"

        def _dispatch(self, method: str) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
            status, response = service.handle(method, self.path, body, dict(self.headers.items()))
            raw = json.dumps(response, sort_keys=True).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def do_GET(self):
            self._dispatch("GET")

        def do_POST(self):
            self._dispatch("POST")

        def log_message(self, format, *args):
            pass

    return Handler


def make_server(platform: Platform, host: str = "127.0.0.1", port: int = 8080) -> tuple[ThreadingHTTPServer, Service]:
    service = Service(platform)
    server = ThreadingHTTPServer((host, port), make_handler(service))
    return server, service


def serve(platform: Platform, host: str = "127.0.0.1", port: int = 8080) -> None:
    server, service = make_server(platform, host, port)
    service.start_scheduler()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        service.stop_scheduler()
        server.server_close()
