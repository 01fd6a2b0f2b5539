"""Remote resolution over HTTP.

``POST /v1/resolve`` takes a ``text/plain`` body: a header stanza, a blank
line, then the caller's platform status in stanza form (may be omitted for
an empty platform)::

    Target: svc:org.example.LogService@[1.0.0,2.0.0)
    Policy: minimal-units
    Conflict: abort
    Architecture: x86_64
    Os: linux
    Disk-Available-KiB: 1048576
    Multi-Version-Kinds: bundle

    Format: 1
    ...

A 200 answer is a header stanza, a blank line and the canonical plan
encoding (one ``VERB\\tNAME\\tVERSION\\tKIND`` line per action)::

    Plan-SHA256: <hex64>
    Total-Disk-KiB: 120
    Total-Cost: 0
    Actions: 2

    install\\torg.example.log\\t1.0.0\\tbundle
    ...

Failures: 400 malformed payload, 422 no solution or unresolvable conflict
(diagnostic lines in the body), 502 repositories unreachable with a cold
cache. ``GET /v1/health`` answers ``ok``. The service only ever checks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .engine import Engine, parse_kinds, parse_target
from .errors import (
    ConflictError,
    CorruptStateError,
    InvalidValue,
    IntegrityError,
    MalformedDocument,
    NoProviderFound,
    NoSolutionError,
    NotFound,
    RepositoryUnavailable,
    UnknownPolicy,
    UsageError,
)
from .model import PlatformProfile
from .resolver import CONFLICT_POLICIES, POLICIES
from .state import PlatformStatus, format_status, parse_status

log = logging.getLogger(__name__)

CONTENT_TYPE = "text/plain; charset=utf-8"
MAX_BODY = 16 * 1024 * 1024
REQUIRED = ("Target", "Architecture", "Os", "Disk-Available-KiB")
OPTIONAL = ("Policy", "Conflict", "Multi-Version-Kinds")


class BadPayload(Exception):
    pass


@dataclass(frozen=True)
class ResolveRequest:
    target: str
    profile: PlatformProfile
    status: PlatformStatus
    policy: str | None = None
    conflict_policy: str | None = None


def encode_request(req: ResolveRequest) -> bytes:
    lines = [f"Target: {req.target}"]
    if req.policy:
        lines.append(f"Policy: {req.policy}")
    if req.conflict_policy:
        lines.append(f"Conflict: {req.conflict_policy}")
    p = req.profile
    lines += [
        f"Architecture: {p.architecture}",
        f"Os: {p.os}",
        f"Disk-Available-KiB: {p.disk_available_kib}",
        f"Multi-Version-Kinds: {','.join(sorted(p.multi_version_kinds))}",
    ]
    return ("\n".join(lines) + "\n\n").encode("utf-8") + format_status(req.status)


def _header(block: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in block.split("\n"):
        key, sep, value = line.partition(": ")
        if not sep or not key:
            raise BadPayload(f"malformed header line {line!r}")
        if key in out:
            raise BadPayload(f"duplicate header {key}")
        out[key] = value
    return out


def decode_request(body: bytes) -> ResolveRequest:
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError:
        raise BadPayload("body is not UTF-8") from None
    if not text.endswith("\n"):
        raise BadPayload("body must end with a newline")
    head, _, rest = text.partition("\n\n")
    fields = _header(head.rstrip("\n"))
    missing = [k for k in REQUIRED if k not in fields]
    if missing:
        raise BadPayload(f"missing header(s): {', '.join(missing)}")
    unknown = sorted(set(fields) - set(REQUIRED) - set(OPTIONAL))
    if unknown:
        raise BadPayload(f"unknown header(s): {', '.join(unknown)}")
    disk = fields["Disk-Available-KiB"]
    if not disk.isascii() or not disk.isdigit():
        raise BadPayload("Disk-Available-KiB must be a non-negative integer")
    policy = fields.get("Policy")
    if policy is not None and policy not in POLICIES:
        raise BadPayload(f"unknown policy {policy!r}")
    conflict = fields.get("Conflict")
    if conflict is not None and conflict not in CONFLICT_POLICIES:
        raise BadPayload(f"unknown conflict policy {conflict!r}")
    try:
        kinds = parse_kinds(fields.get("Multi-Version-Kinds", "bundle"))
        profile = PlatformProfile(fields["Architecture"], fields["Os"], int(disk), kinds)
        parse_target(fields["Target"])
        status = parse_status(rest.encode("utf-8")) if rest.strip() else PlatformStatus()
    except (UsageError, InvalidValue) as exc:
        raise BadPayload(str(exc)) from None
    except CorruptStateError as exc:
        raise BadPayload(f"inline status: {exc}") from None
    return ResolveRequest(fields["Target"], profile, status, policy, conflict)


def encode_response(plan_bytes: bytes, plan_hash: str, disk: int, cost: int, actions: int) -> bytes:
    head = f"Plan-SHA256: {plan_hash}\nTotal-Disk-KiB: {disk}\nTotal-Cost: {cost}\nActions: {actions}\n\n"
    return head.encode("utf-8") + plan_bytes


def decode_response(body: bytes) -> tuple[dict[str, str], bytes]:
    head, sep, plan = body.partition(b"\n\n")
    if not sep:
        raise BadPayload("response lacks a header block")
    return _header(head.decode("utf-8")), plan


def handle_resolve(engine: Engine, body: bytes) -> tuple[int, bytes]:
    """Answer one resolve request; returns (HTTP status, body)."""
    try:
        req = decode_request(body)
    except BadPayload as exc:
        return HTTPStatus.BAD_REQUEST, f"malformed payload: {exc}\n".encode()
    try:
        result = engine.check(req.target, req.profile, req.policy, req.conflict_policy, status=req.status)
    except (NoProviderFound, NoSolutionError) as exc:
        return HTTPStatus.UNPROCESSABLE_ENTITY, ("\n".join(exc.diagnostics) + "\n").encode()
    except ConflictError as exc:
        return HTTPStatus.UNPROCESSABLE_ENTITY, ("".join(f"conflict: {c}\n" for c in exc.conflicts)).encode()
    except UnknownPolicy as exc:
        return HTTPStatus.BAD_REQUEST, f"{exc}\n".encode()
    except (RepositoryUnavailable, IntegrityError, NotFound, MalformedDocument) as exc:
        return HTTPStatus.BAD_GATEWAY, f"repository failure: {exc}\n".encode()
    plan = result.plan
    sol = result.solution
    return HTTPStatus.OK, encode_response(plan.encode(), plan.plan_hash, sol.total_disk_kib, sol.total_cost, len(plan))


def make_handler(engine: Engine) -> type[BaseHTTPRequestHandler]:
    class ResolveHandler(BaseHTTPRequestHandler):
        server_version = "resolvit"

        def _send(self, code: int, body: bytes) -> None:
            self.send_response(code)
            self.send_header("Content-Type", CONTENT_TYPE)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self) -> None:  # noqa: N802
            if self.path == "/v1/health":
                self._send(HTTPStatus.OK, b"ok\n")
            else:
                self._send(HTTPStatus.NOT_FOUND, b"not found\n")

        def do_POST(self) -> None:  # noqa: N802
            if self.path != "/v1/resolve":
                self._send(HTTPStatus.NOT_FOUND, b"not found\n")
                return
            length = self.headers.get("Content-Length")
            if length is None or not length.isdigit() or int(length) > MAX_BODY:
                self._send(HTTPStatus.BAD_REQUEST, b"Content-Length required\n")
                return
            body = self.rfile.read(int(length))
            if len(body) != int(length):
                self._send(HTTPStatus.BAD_REQUEST, b"truncated body\n")
                return
            code, payload = handle_resolve(engine, body)
            self._send(code, payload)

        def log_message(self, fmt: str, *args) -> None:
            log.info("%s - %s", self.address_string(), fmt % args)

    return ResolveHandler


def make_server(engine: Engine, host: str = "127.0.0.1", port: int = 8470) -> ThreadingHTTPServer:
    return ThreadingHTTPServer((host, port), make_handler(engine))


def parse_listen(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise UsageError(f"--listen expects host:port, got {text!r}")
    return host or "127.0.0.1", int(port)
