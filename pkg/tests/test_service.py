import socket
import threading
import urllib.error
import urllib.request

import pytest

from resolvit.engine import Engine, EngineConfig
from resolvit.repository import RepositorySource
from resolvit.service import (
    ResolveRequest,
    decode_request,
    decode_response,
    encode_request,
    handle_resolve,
    make_server,
    parse_listen,
)
from resolvit.errors import UsageError
from resolvit.state import PlatformStatus

from helpers import PROFILE, desc, status_of
from scenarios import BY_NAME


def request_for(scenario, engine, status=None) -> bytes:
    status = engine.store.load() if status is None else status
    return encode_request(ResolveRequest(scenario.target, scenario.profile, status, scenario.policy, scenario.conflict))


@pytest.fixture
def live(tmp_path):
    """A running service over the diamond scenario's repository."""
    s = BY_NAME["diamond"]
    engine = s.prepare(tmp_path)
    server = make_server(engine, "127.0.0.1", 0)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    yield s, engine, f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


def test_request_round_trip():
    req = ResolveRequest("svc:app@[1.0.0,2.0.0)", PROFILE, status_of(desc("x")), "newest-versions", "replace")
    assert decode_request(encode_request(req)) == req


def test_resolve_matches_local_check(tmp_path):
    s = BY_NAME["replace-two-and-deps"]
    engine = s.prepare(tmp_path)
    code, body = handle_resolve(engine, request_for(s, engine))
    assert code == 200
    head, plan = decode_response(body)
    local = engine.check(s.target, s.profile, s.policy, s.conflict).plan
    assert plan == local.encode()
    assert head["Plan-SHA256"] == local.plan_hash
    assert head["Actions"] == "5"


def test_inline_status_is_used_instead_of_the_servers(tmp_path):
    s = BY_NAME["single"]
    engine = s.prepare(tmp_path)
    installed = status_of(desc("app"))
    code, body = handle_resolve(engine, request_for(s, engine, installed))
    assert code == 200 and decode_response(body)[1] == b""
    # the server's own platform is untouched and still empty
    assert engine.store.load() == PlatformStatus()


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b[:-1],  # no trailing newline
        lambda b: b[: len(b) // 2],  # cut inside the status
        lambda b: b.replace(b"Os: linux\n", b""),
        lambda b: b.replace(b"Disk-Available-KiB: ", b"Disk-Available-KiB: -"),
        lambda b: b.replace(b"Target: ", b"Colour: blue\nTarget: "),
        lambda b: b.replace(b"Policy: minimal-units", b"Policy: cheapest"),
        lambda b: b.replace(b"Target: svc:", b"Target: pkg:"),
        lambda b: b.replace(b"Version: 1.0.0", b"Version: one"),
        lambda b: b"\xff" + b,
    ],
)
def test_malformed_payload_is_400(tmp_path, mutate):
    s = BY_NAME["single"]
    engine = s.prepare(tmp_path)
    body = request_for(s, engine, status_of(desc("other")))
    assert handle_resolve(engine, body)[0] == 200
    assert handle_resolve(engine, mutate(body))[0] == 400


@pytest.mark.parametrize("name, fragment", [("missing-provider", b"ghost"), ("conflict-abort", b"conflict: app@1.0.0:bundle vs legacy")])
def test_unresolvable_is_422(tmp_path, name, fragment):
    s = BY_NAME[name]
    engine = s.prepare(tmp_path)
    code, body = handle_resolve(engine, request_for(s, engine))
    assert code == 422 and fragment in body


def test_unreachable_repositories_are_502(tmp_path):
    engine = Engine(EngineConfig([RepositorySource.from_path(tmp_path / "dead")], tmp_path / "p", tmp_path / "c"))
    s = BY_NAME["single"]
    assert handle_resolve(engine, request_for(s, engine))[0] == 502


def test_live_health_and_resolve(live):
    s, engine, url = live
    with urllib.request.urlopen(url + "/v1/health", timeout=10) as resp:
        assert resp.status == 200 and resp.read() == b"ok\n"
    req = urllib.request.Request(url + "/v1/resolve", data=request_for(s, engine), method="POST")
    req.add_header("Content-Type", "text/plain; charset=utf-8")
    with urllib.request.urlopen(req, timeout=10) as resp:
        assert resp.headers["Content-Type"] == "text/plain; charset=utf-8"
        _, plan = decode_response(resp.read())
    assert plan == engine.check(s.target, s.profile).plan.encode()


def test_live_unknown_path_is_404(live):
    _, _, url = live
    with pytest.raises(urllib.error.HTTPError) as info:
        urllib.request.urlopen(url + "/v2/other", timeout=10)
    assert info.value.code == 404


def test_live_truncated_body_is_400(live):
    s, engine, url = live
    body = request_for(s, engine)
    port = int(url.rsplit(":", 1)[1])
    with socket.create_connection(("127.0.0.1", port), timeout=10) as sock:
        head = f"POST /v1/resolve HTTP/1.1\r\nHost: x\r\nContent-Length: {len(body) + 50}\r\n\r\n".encode()
        sock.sendall(head + body)
        sock.shutdown(socket.SHUT_WR)
        reply = b""
        while chunk := sock.recv(4096):
            reply += chunk
    assert reply.startswith(b"HTTP/1.0 400") or reply.startswith(b"HTTP/1.1 400")


def test_parse_listen():
    assert parse_listen("0.0.0.0:9000") == ("0.0.0.0", 9000)
    assert parse_listen(":9000") == ("127.0.0.1", 9000)
    with pytest.raises(UsageError):
        parse_listen("9000")
