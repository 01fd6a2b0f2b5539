"""Hypothesis strategies for documents, and single-field corruptions of them."""

from __future__ import annotations

import base64
import re
from datetime import datetime, timedelta, timezone

from hypothesis import strategies as st

from resolvit.model import (
    Descriptor,
    DependencyEndpoint,
    DependencyGroup,
    ResourceRequirements,
    ServiceRef,
    UnitId,
)
from resolvit.state import InstallRecord, PlatformStatus
from resolvit.versions import ANY, Version, VersionRange

_ALNUM = "abcdefghijklmnopqrstuvwxyz0123456789"
tokens = st.builds(
    lambda head, tail: head + tail,
    st.sampled_from("abcdefghijklmnopqrstuvwxyz"),
    st.text(_ALNUM + "._-", max_size=10),
)
hex64 = st.text("0123456789abcdef", min_size=64, max_size=64)
relpaths = st.lists(st.text(_ALNUM + "_+-", min_size=1, max_size=6), min_size=1, max_size=3).map("/".join)
versions = st.builds(
    Version,
    st.integers(0, 30),
    st.integers(0, 30),
    st.integers(0, 30),
    st.one_of(st.none(), st.text(_ALNUM + "ABCXYZ", min_size=1, max_size=5)),
)


@st.composite
def ranges(draw) -> VersionRange:
    form = draw(st.sampled_from(["any", "exact", "bounded", "half"]))
    if form == "any":
        return ANY
    if form == "exact":
        return VersionRange.exactly(draw(versions))
    a, b = draw(versions), draw(versions)
    lo, hi = min(a, b), max(a, b)
    if form == "half":
        return VersionRange(lo, draw(st.booleans()))
    if lo == hi:
        return VersionRange(lo, True, hi, True)
    return VersionRange(lo, draw(st.booleans()), hi, draw(st.booleans()))


endpoints = st.builds(
    DependencyEndpoint,
    tokens,
    ranges(),
    st.one_of(st.none(), st.sampled_from(["http://mirror.example/repo", "file:///srv/repo"])),
)


@st.composite
def groups(draw) -> DependencyGroup:
    op = draw(st.sampled_from(["AND", "OR", "XOR", "NOT"]))
    eps = draw(st.lists(endpoints, min_size=1, max_size=3))
    card = draw(st.integers(1, len(eps))) if op == "OR" else 1
    return DependencyGroup(op, tuple(eps), card)


descriptors = st.builds(
    Descriptor,
    id=st.builds(UnitId, tokens, versions, st.sampled_from(["bundle", "native", "driver"])),
    provider=tokens,
    package_sha256=hex64,
    package_location=relpaths,
    priority=st.integers(0, 100),
    provides=st.lists(st.builds(ServiceRef, tokens, versions), max_size=3, unique=True).map(tuple),
    groups=st.lists(groups(), max_size=3).map(tuple),
    requirements=st.builds(
        ResourceRequirements,
        st.integers(0, 10**7),
        st.one_of(st.none(), st.sampled_from(["x86_64", "armv7", "aarch64"])),
        st.one_of(st.none(), st.sampled_from(["linux", "darwin"])),
    ),
)

_EPOCH = datetime(2020, 1, 1, tzinfo=timezone.utc)
timestamps = st.integers(0, 10**9).map(lambda s: _EPOCH + timedelta(seconds=s))


@st.composite
def statuses(draw) -> PlatformStatus:
    ds = draw(st.lists(descriptors, max_size=4, unique_by=lambda d: d.id))
    return PlatformStatus(tuple(InstallRecord.from_descriptor(d, draw(timestamps)) for d in ds))


# -- corruption ----------------------------------------------------------------

# each replacement lies outside the attribute's domain
_BAD_ATTR_VALUES = {
    "name": "-bad name",
    "version": "1.x",
    "kind": "firmware",
    "provider": "",
    "priority": "101",
    "package-sha256": "XYZ",
    "package-location": "../escape",
    "type": "NAND",
    "cardinality": "0",
    "service": "",
    "range": "[2.0.0,1.0.0)",
    "repository": "ftp://nowhere",
    "disk-space-kib": "-1",
    "architecture": "",
    "os": "has space",
}


_REQUIRED_ATTRS = {"name", "version", "kind", "provider", "package-sha256", "package-location", "type", "service"}


def descriptor_corruptions(doc: bytes) -> list[bytes]:
    """Every single-attribute corruption of a canonical descriptor, plus structural ones."""
    header, body = doc.decode("utf-8").split("\n", 1)
    out = []
    for m in re.finditer(r'([a-z-]+)="([^"]*)"', body):
        attr = m.group(1)
        bad = _BAD_ATTR_VALUES.get(attr)
        if bad is not None:
            out.append(body[: m.start(2)] + bad + body[m.end(2) :])
        if attr in _REQUIRED_ATTRS:
            out.append(body[: m.start()] + body[m.end() :])
    out.append(body.replace("<deployment-unit ", '<deployment-unit bogus="1" ', 1))
    out.append(body.replace("</deployment-unit>", "<extra/></deployment-unit>"))
    out.append(body[: len(body) // 2])
    return [(header + "\n" + o).encode() for o in out]


_BAD_FIELD_VALUES = {
    "Format": "2",
    "Name": "bad name",
    "Version": "one",
    "Kind": "firmware",
    "Provider": "",
    "Provides": "svc",
    "Package-SHA256": "0" * 63,
    "Installed-At": "yesterday",
    "Descriptor": "!!notbase64!!",
}


def status_corruptions(doc: bytes) -> list[bytes]:
    """Single-field corruptions of a status file: bad values, dropped fields, mutated embedded descriptors."""
    lines = doc.decode("utf-8").split("\n")
    out = []
    for i, line in enumerate(lines):
        key, sep, value = line.partition(": ")
        if not sep:
            continue
        bad = _BAD_FIELD_VALUES.get(key)
        if bad is not None:
            out.append("\n".join(lines[:i] + [f"{key}: {bad}"] + lines[i + 1 :]).encode())
        out.append("\n".join(lines[:i] + lines[i + 1 :]).encode())
        if key == "Descriptor":
            raw = base64.b64decode(value).replace(b'kind="', b'kind="x', 1)
            out.append("\n".join(lines[:i] + [f"Descriptor: {base64.b64encode(raw).decode()}"] + lines[i + 1 :]).encode())
    return out

