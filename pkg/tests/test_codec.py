import pytest
from hypothesis import given, settings, strategies as st

from resolvit.codec import (
    IndexEntry,
    parse_descriptor,
    parse_repository_index,
    providers_by_service,
    serialize_descriptor,
    serialize_repository_index,
)
from resolvit.errors import DuplicateUnit, MalformedDocument, SchemaViolation, UnknownDependencyType
from resolvit.model import ServiceRef, UnitId
from resolvit.versions import ANY, parse_range, parse_version

from helpers import ZERO_HASH, desc, ep, grp
from strategies import descriptor_corruptions, descriptors, hex64, relpaths, tokens, versions

LOG = b"""<?xml version="1.0" encoding="UTF-8"?>
<deployment-unit name="org.example.log" version="1.2.0" kind="bundle" provider="acme" priority="50" package-sha256="%s" package-location="pkgs/log-1.2.0.jar">
  <provides>
    <service name="org.example.LogService" version="1.2.0"/>
  </provides>
  <dependencies>
    <dependency type="AND" cardinality="1">
      <endpoint service="org.example.Config" range="[1.0.0,2.0.0)"/>
    </dependency>
    <dependency type="NOT" cardinality="1">
      <endpoint service="org.example.LegacyLog"/>
    </dependency>
  </dependencies>
  <requirements disk-space-kib="120" architecture="x86_64"/>
</deployment-unit>
""" % ZERO_HASH.encode()


def test_parse_example_descriptor():
    d = parse_descriptor(LOG)
    assert d.id == UnitId("org.example.log", parse_version("1.2.0"), "bundle")
    assert d.provides == (ServiceRef("org.example.LogService", parse_version("1.2.0")),)
    assert [g.op for g in d.groups] == ["AND", "NOT"]
    assert d.groups[0].endpoints[0].range == parse_range("[1.0.0,2.0.0)")
    assert d.groups[1].endpoints[0].range is ANY
    assert d.requirements.disk_space_kib == 120
    assert d.requirements.architecture == "x86_64"
    assert d.requirements.os is None


def test_example_is_canonical():
    # "*" ranges are written out explicitly, so the canonical form differs only there
    canonical = serialize_descriptor(parse_descriptor(LOG))
    assert canonical == LOG.replace(b'service="org.example.LegacyLog"/>', b'service="org.example.LegacyLog" range="*"/>')


def test_empty_sections_are_self_closing():
    text = serialize_descriptor(desc("a", provides=[])).decode()
    assert "  <provides/>\n" in text and "  <dependencies/>\n" in text
    assert text.startswith('<?xml version="1.0" encoding="UTF-8"?>\n<deployment-unit name="a"')
    assert text.endswith("</deployment-unit>\n")


@pytest.mark.parametrize(
    "mutate, exc",
    [
        (lambda t: t.replace(b'type="AND"', b'type="IMPLIES"'), UnknownDependencyType),
        (lambda t: t.replace(b"deployment-unit", b"unit"), SchemaViolation),
        (lambda t: t.replace(b"<provides>", b"<provides>text"), MalformedDocument),
        (lambda t: t.replace(b'kind="bundle"', b'kind="bundle" colour="red"'), MalformedDocument),
        (lambda t: t.replace(b"  <requirements", b"  <provides/>\n  <requirements"), MalformedDocument),
        (lambda t: b'<!DOCTYPE x [<!ENTITY e "boom">]>' + t.split(b"\n", 1)[1], MalformedDocument),
        (lambda t: t[:-20], MalformedDocument),
        (lambda t: t.replace(b'range="[1.0.0,2.0.0)"', b'range="[1.0.0"'), MalformedDocument),
    ],
)
def test_rejects_malformed(mutate, exc):
    with pytest.raises(exc):
        parse_descriptor(mutate(LOG))


@settings(max_examples=300)
@given(descriptors)
def test_descriptor_round_trip(d):
    data = serialize_descriptor(d)
    back = parse_descriptor(data)
    assert back == d
    assert serialize_descriptor(back) == data


@settings(max_examples=60)
@given(descriptors)
def test_single_field_corruption_rejected(d):
    for bad in descriptor_corruptions(serialize_descriptor(d)):
        with pytest.raises(MalformedDocument):
            parse_descriptor(bad)


entries = st.builds(
    IndexEntry,
    st.builds(UnitId, tokens, versions, st.sampled_from(["bundle", "native", "driver"])),
    relpaths,
    relpaths,
    hex64,
    hex64,
    st.lists(st.builds(ServiceRef, tokens, versions), max_size=3).map(tuple),
    st.integers(0, 1000),
)


@settings(max_examples=200)
@given(st.lists(entries, max_size=5, unique_by=lambda e: e.key))
def test_index_round_trip(es):
    data = serialize_repository_index(es)
    assert parse_repository_index(data) == es
    assert serialize_repository_index(parse_repository_index(data)) == data


def test_index_duplicate_unit():
    e = IndexEntry(UnitId("a", parse_version("1.0.0")), "d/a.xml", "p/a", ZERO_HASH, ZERO_HASH)
    with pytest.raises(DuplicateUnit):
        parse_repository_index(serialize_repository_index([e, e]))


def test_providers_by_service():
    a = IndexEntry(UnitId("a", parse_version("1.0.0")), "d/a", "p/a", ZERO_HASH, ZERO_HASH, (ServiceRef("s", parse_version("1.0.0")),))
    b = IndexEntry(UnitId("b", parse_version("1.0.0")), "d/b", "p/b", ZERO_HASH, ZERO_HASH, (ServiceRef("s", parse_version("2.0.0")), ServiceRef("t", parse_version("1.0.0"))))
    assert providers_by_service([a, b]) == {"s": [a, b], "t": [b]}


def test_builder_descriptor_round_trips():
    d = desc("a", groups=[grp("OR", ep("x", "[1.0.0,)"), ep("y"), card=2)], disk=7, os="linux")
    assert parse_descriptor(serialize_descriptor(d)) == d
