"""Minimal threaded HTTP service layer used by every stack service.

Each service declares a route table of ``(method, path regex, handler)``;
handlers receive a parsed :class:`Request` and return a :class:`Response`.
Responses may carry a JSON-able body, text, bytes, or a byte-chunk
iterator (used for server-sent events). Errors raised from handlers map
to status codes through ``ERROR_STATUS`` unless the service installs its
own translation.
"""

from __future__ import annotations

import errno
import json
import logging
import re
import socket
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Iterable, Iterator
from urllib.parse import parse_qs, unquote, urlparse

from . import errors as err

log = logging.getLogger(__name__)

ERROR_STATUS: dict[type, int] = {
    err.NotFound: 404,
    err.DatasetNotFound: 404,
    err.ResourceNotFound: 404,
    err.UnknownOrganization: 404,
    err.UnknownDevice: 404,
    err.UnknownCommandEntity: 404,
    err.UnknownCommand: 404,
    err.AlreadyExists: 409,
    err.Conflict: 409,
    err.DuplicateDevice: 409,
    err.NameConflict: 409,
    err.InvalidEntity: 400,
    err.InvalidQuery: 400,
    err.InvalidSubscription: 400,
    err.InvalidName: 400,
    err.InvalidRegistration: 400,
    err.MalformedPayload: 400,
    err.UnmappedKey: 400,
    err.InvalidConfig: 400,
    err.MetadataOnlyResource: 400,
    err.InvalidCredentials: 401,
    err.Unauthorized: 401,
    err.Forbidden: 403,
    err.UpstreamUnavailable: 502,
}


@dataclass
class Request:
    method: str
    path: str
    query: dict[str, list[str]]
    headers: dict[str, str]
    body: bytes
    raw_target: str = ""  # original request target, kept for proxying

    def json(self) -> Any:
        if not self.body:
            return None
        return json.loads(self.body.decode("utf-8"))

    def param(self, name: str, default: str | None = None) -> str | None:
        values = self.query.get(name)
        return values[-1] if values else default

    def bearer_token(self) -> str | None:
        auth = self.headers.get("authorization", "")
        if auth.lower().startswith("bearer "):
            return auth[7:].strip()
        return None


@dataclass
class Response:
    status: int = 200
    body: Any = None
    content_type: str | None = None
    headers: dict[str, str] = field(default_factory=dict)
    stream: Iterator[bytes] | None = None

    def encode(self) -> tuple[bytes, str]:
        if self.body is None:
            return b"", self.content_type or "application/json"
        if isinstance(self.body, bytes):
            return self.body, self.content_type or "application/octet-stream"
        if isinstance(self.body, str):
            return self.body.encode("utf-8"), self.content_type or "text/plain; charset=utf-8"
        return (
            json.dumps(self.body).encode("utf-8"),
            self.content_type or "application/json",
        )


Handler = Callable[..., Response]


@dataclass
class Route:
    method: str
    pattern: re.Pattern
    handler: Handler


def route(method: str, pattern: str, handler: Handler) -> Route:
    return Route(method.upper(), re.compile(pattern), handler)


class HttpService:
    """One listening socket plus a route table, served on its own thread."""

    def __init__(
        self,
        name: str,
        routes: Iterable[Route],
        host: str = "127.0.0.1",
        port: int = 0,
        error_translator: Callable[[Exception], Response] | None = None,
    ):
        self.name = name
        self.routes = list(routes)
        self.host = host
        self.requested_port = port
        self.error_translator = error_translator
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None
        # health stays first so catch-all routes (the proxy) cannot shadow it
        self.routes.insert(0, route("GET", r"/health", self._health))

    def _health(self, request: Request) -> Response:
        return Response(200, {"status": "ok", "service": self.name})

    # --- lifecycle ---

    def start(self) -> "HttpService":
        service = self

        class _Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"
            # Header flush and body are separate small writes; without
            # TCP_NODELAY that write-write-read pattern stalls ~40 ms per
            # request on Nagle + delayed ACK.
            disable_nagle_algorithm = True

            def log_message(self, fmt, *args):  # noqa: N802 - stdlib name
                log.debug("%s %s", service.name, fmt % args)

            def _handle(self):
                service._dispatch(self)

            do_GET = do_POST = do_PATCH = do_DELETE = do_PUT = _handle

        try:
            self._server = ThreadingHTTPServer((self.host, self.requested_port), _Handler)
        except OSError as exc:
            if exc.errno in (errno.EADDRINUSE, errno.EACCES):
                raise err.PortInUse(f"{self.name}: port {self.requested_port} unavailable") from exc
            raise
        self._server.daemon_threads = True
        # Tight poll so stop() returns promptly; the default 0.5 s interval
        # makes every shutdown cost up to half a second.
        server = self._server
        self._thread = threading.Thread(
            target=lambda: server.serve_forever(poll_interval=0.02),
            name=f"http-{self.name}",
            daemon=True,
        )
        self._thread.start()
        return self

    @property
    def port(self) -> int:
        assert self._server is not None, "service not started"
        return self._server.server_address[1]

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def stop(self):
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    # --- request handling ---

    def _dispatch(self, raw: BaseHTTPRequestHandler):
        length = int(raw.headers.get("Content-Length") or 0)
        body = raw.rfile.read(length) if length else b""
        parsed = urlparse(raw.path)
        request = Request(
            method=raw.command,
            path=unquote(parsed.path),
            query=parse_qs(parsed.query),
            headers={k.lower(): v for k, v in raw.headers.items()},
            body=body,
            raw_target=raw.path,
        )
        try:
            response = self._route(request)
        except Exception as exc:  # noqa: BLE001 - boundary translation
            response = self._translate_error(exc)
        self._write(raw, response)

    def _route(self, request: Request) -> Response:
        for r in self.routes:
            if r.method != request.method:
                continue
            m = r.pattern.fullmatch(request.path)
            if m:
                return r.handler(request, **m.groupdict())
        return Response(404, {"error": "NotFound", "detail": f"no route for {request.method} {request.path}"})

    def _translate_error(self, exc: Exception) -> Response:
        if self.error_translator is not None:
            try:
                return self.error_translator(exc)
            except Exception:  # noqa: BLE001
                pass
        if isinstance(exc, json.JSONDecodeError):
            return Response(400, {"error": "InvalidBody", "detail": str(exc)})
        status = ERROR_STATUS.get(type(exc))
        if status is None:
            log.exception("%s: unhandled error", self.name, exc_info=exc)
            return Response(500, {"error": type(exc).__name__, "detail": str(exc)})
        return Response(status, {"error": type(exc).__name__, "detail": str(exc)})

    def _write(self, raw: BaseHTTPRequestHandler, response: Response):
        try:
            if response.stream is not None:
                raw.send_response(response.status)
                raw.send_header("Content-Type", response.content_type or "text/event-stream")
                raw.send_header("Cache-Control", "no-cache")
                for k, v in response.headers.items():
                    raw.send_header(k, v)
                raw.end_headers()
                for chunk in response.stream:
                    raw.wfile.write(chunk)
                    raw.wfile.flush()
                return
            payload, content_type = response.encode()
            raw.send_response(response.status)
            raw.send_header("Content-Type", content_type)
            raw.send_header("Content-Length", str(len(payload)))
            for k, v in response.headers.items():
                raw.send_header(k, v)
            raw.end_headers()
            if payload:
                raw.wfile.write(payload)
        except (BrokenPipeError, ConnectionResetError, socket.timeout):
            raw.close_connection = True
