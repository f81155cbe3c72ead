"""Operator-facing HTTP API over a live control room.

Read endpoints return JSON snapshots; POST endpoints apply operator
commands; /api/events streams the event log as server-sent events from
any starting sequence number, so a client can always resume gap-free.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import parse_qs, urlparse

from .control_room import ControlRoom, Rejected

SSE_HEARTBEAT_S = 2.0


class ApiContext:
    def __init__(
        self,
        room: ControlRoom,
        clock: Callable[[], float],
        static_dir: Optional[Path] = None,
        status: Optional[Callable[[], dict]] = None,
    ):
        self.room = room
        self.clock = clock
        self.static_dir = static_dir
        self.status = status or (lambda: {"now_s": clock()})
        self.stopping = threading.Event()


def make_server(ctx: ApiContext, host: str, port: int) -> ThreadingHTTPServer:
    class Handler(_ApiHandler):
        context = ctx

    server = ThreadingHTTPServer((host, port), Handler)
    server.daemon_threads = True
    return server


class _ApiHandler(BaseHTTPRequestHandler):
    context: ApiContext
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # quiet server
        pass

    def _send_json(self, status: int, payload) -> None:
        body = json.dumps(payload, sort_keys=True).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", "0") or 0)
        if length == 0:
            return {}
        try:
            return json.loads(self.rfile.read(length))
        except json.JSONDecodeError:
            return {}

    # -- GET -----------------------------------------------------------------

    def do_GET(self):
        ctx = self.context
        url = urlparse(self.path)
        path = url.path.rstrip("/") or "/"
        if path == "/api/status":
            self._send_json(200, ctx.status())
        elif path == "/api/ambulances":
            self._send_json(200, ctx.room.ambulances_summary(ctx.clock()))
        elif path == "/api/signals":
            self._send_json(200, ctx.room.signals_summary())
        elif path == "/api/graph":
            self._send_json(200, ctx.room.graph_summary())
        elif path == "/api/events":
            query = parse_qs(url.query)
            try:
                from_seq = int(query.get("from", ["0"])[0])
            except ValueError:
                self._send_json(400, {"error": "from must be an integer"})
                return
            self._stream_events(from_seq)
        elif path == "/" or path.startswith("/static"):
            self._serve_static(path)
        else:
            self._send_json(404, {"error": f"no route {path}"})

    def _serve_static(self, path: str) -> None:
        ctx = self.context
        if ctx.static_dir is None:
            self._send_json(404, {"error": "no dashboard bundled; use the /api endpoints"})
            return
        name = "index.html" if path == "/" else path.removeprefix("/static/")
        target = (ctx.static_dir / name).resolve()
        if not str(target).startswith(str(ctx.static_dir.resolve())) or not target.is_file():
            self._send_json(404, {"error": f"no file {name}"})
            return
        content_types = {".html": "text/html", ".js": "text/javascript",
                         ".css": "text/css", ".map": "application/json"}
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", content_types.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _stream_events(self, from_seq: int) -> None:
        ctx = self.context
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-store")
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        next_seq = from_seq
        try:
            while not ctx.stopping.is_set():
                records = ctx.room.events.wait_for(next_seq, timeout=SSE_HEARTBEAT_S)
                if not records:
                    self.wfile.write(b": keep-alive\n\n")
                    self.wfile.flush()
                    continue
                for record in records:
                    data = record.to_json().encode()
                    self.wfile.write(b"id: %d\ndata: %s\n\n" % (record.seq, data))
                next_seq = records[-1].seq + 1
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            pass

    # -- POST ----------------------------------------------------------------

    def do_POST(self):
        ctx = self.context
        parts = [p for p in urlparse(self.path).path.split("/") if p]
        body = self._read_body()
        now = ctx.clock()
        operator = str(body.get("operator", "operator"))
        try:
            if len(parts) == 4 and parts[:2] == ["api", "controllers"]:
                controller_id, verb = parts[2], parts[3]
                if controller_id not in ctx.room.controllers:
                    self._send_json(404, {"error": f"unknown controller {controller_id}"})
                    return
                if verb == "preempt":
                    approach = body.get("approach")
                    if not isinstance(approach, str):
                        self._send_json(409, {"error": "body must carry an approach"})
                        return
                    try:
                        ctx.room.operator_preempt(controller_id, approach, now, operator)
                    except Rejected as exc:
                        self._send_json(409, {"error": str(exc)})
                        return
                    self._send_json(200, {"ok": True})
                    return
                if verb == "release":
                    try:
                        ctx.room.operator_release(controller_id, now, operator)
                    except Rejected as exc:
                        self._send_json(404, {"error": str(exc)})
                        return
                    self._send_json(200, {"ok": True})
                    return
            if len(parts) == 4 and parts[:2] == ["api", "ambulances"] and parts[3] == "route":
                hospital = body.get("hospital")
                if not isinstance(hospital, str):
                    self._send_json(404, {"error": "body must carry a hospital"})
                    return
                try:
                    ctx.room.operator_pin_route(parts[2], hospital, now, operator)
                except Rejected as exc:
                    self._send_json(404, {"error": str(exc)})
                    return
                self._send_json(200, {"ok": True})
                return
            self._send_json(404, {"error": f"no route {self.path}"})
        except Exception as exc:  # surface the reason instead of a blank 500
            self._send_json(500, {"error": repr(exc)})
