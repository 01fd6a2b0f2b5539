"""Deployment descriptor and repository index documents.

Parsing is strict: unknown elements or attributes, stray text and values
outside their domain are all rejected. Serialization produces one canonical
byte form per value (fixed attribute order, two-space indent, LF, UTF-8).
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from collections.abc import Iterable
from dataclasses import dataclass

from .errors import (
    DuplicateUnit,
    InvalidValue,
    MalformedDocument,
    MalformedRange,
    MalformedVersion,
    SchemaViolation,
    UnknownDependencyType,
)
from .model import (
    DEFAULT_PRIORITY,
    KINDS,
    OPERATORS,
    Descriptor,
    DependencyEndpoint,
    DependencyGroup,
    ResourceRequirements,
    ServiceRef,
    UnitId,
    check_hex64,
    check_relpath,
)
from .versions import ANY, format_range, parse_range, parse_version

XML_HEADER = '<?xml version="1.0" encoding="UTF-8"?>\n'


@dataclass(frozen=True)
class IndexEntry:
    id: UnitId
    descriptor_location: str
    package_location: str
    descriptor_sha256: str
    package_sha256: str
    provides: tuple[ServiceRef, ...] = ()
    cost: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "provides", tuple(self.provides))
        check_relpath(self.descriptor_location, "descriptor-location")
        check_relpath(self.package_location, "package-location")
        check_hex64(self.descriptor_sha256, "descriptor-sha256")
        check_hex64(self.package_sha256, "package-sha256")
        if not isinstance(self.cost, int) or isinstance(self.cost, bool) or self.cost < 0:
            raise InvalidValue(f"cost must be a non-negative integer: {self.cost!r}")

    @property
    def key(self) -> tuple:
        return (self.id.name, self.id.version, self.id.kind)


# -- parsing helpers ---------------------------------------------------------


def _parse_xml(data: bytes) -> ET.Element:
    if not isinstance(data, (bytes, bytearray)):
        raise MalformedDocument("document must be a byte sequence")
    if b"<!DOCTYPE" in data or b"<!ENTITY" in data:
        raise MalformedDocument("DTDs are not allowed")
    try:
        return ET.fromstring(bytes(data))
    except ET.ParseError as exc:
        raise MalformedDocument(f"XML syntax error: {exc}") from None


def _attrs(el: ET.Element, required: Iterable[str], optional: Iterable[str] = ()) -> dict[str, str]:
    required = tuple(required)
    allowed = set(required) | set(optional)
    unknown = sorted(set(el.attrib) - allowed)
    if unknown:
        raise SchemaViolation(f"<{el.tag}>: unknown attribute(s) {', '.join(unknown)}")
    missing = [a for a in required if a not in el.attrib]
    if missing:
        raise SchemaViolation(f"<{el.tag}>: missing attribute(s) {', '.join(missing)}")
    return dict(el.attrib)


def _no_text(el: ET.Element) -> None:
    if el.text and el.text.strip():
        raise SchemaViolation(f"<{el.tag}>: unexpected text content")
    for child in el:
        if child.tail and child.tail.strip():
            raise SchemaViolation(f"<{el.tag}>: unexpected text content")


def _children(el: ET.Element, allowed: Iterable[str]) -> list[ET.Element]:
    _no_text(el)
    allowed = set(allowed)
    kids = list(el)
    for child in kids:
        if not isinstance(child.tag, str) or child.tag not in allowed:
            raise SchemaViolation(f"<{el.tag}>: unexpected element <{child.tag}>")
    return kids


def _int(value: str, what: str, lo: int = 0, hi: int | None = None) -> int:
    if not value.isascii() or not value.isdigit():
        raise SchemaViolation(f"{what} must be a non-negative integer: {value!r}")
    n = int(value)
    if n < lo or (hi is not None and n > hi):
        raise SchemaViolation(f"{what} out of range: {value!r}")
    return n


def _wrap(fn, *args):
    # value-domain failures inside a document surface as schema violations
    try:
        return fn(*args)
    except (InvalidValue, MalformedVersion, MalformedRange) as exc:
        raise SchemaViolation(str(exc)) from None


def _service(el: ET.Element) -> ServiceRef:
    a = _attrs(el, ("name", "version"))
    _children(el, ())
    return _wrap(lambda: ServiceRef(a["name"], parse_version(a["version"])))


def _endpoint(el: ET.Element) -> DependencyEndpoint:
    a = _attrs(el, ("service",), ("range", "repository"))
    _children(el, ())

    def build() -> DependencyEndpoint:
        r = parse_range(a["range"]) if "range" in a else ANY
        return DependencyEndpoint(a["service"], r, a.get("repository"))

    return _wrap(build)


def _group(el: ET.Element) -> DependencyGroup:
    a = _attrs(el, ("type",), ("cardinality",))
    if a["type"] not in OPERATORS:
        raise UnknownDependencyType(f"unknown dependency type {a['type']!r}")
    endpoints = [_endpoint(child) for child in _children(el, ("endpoint",))]
    if not endpoints:
        raise SchemaViolation("<dependency> needs at least one <endpoint>")
    cardinality = _int(a["cardinality"], "cardinality", lo=1) if "cardinality" in a else 1
    return _wrap(lambda: DependencyGroup(a["type"], tuple(endpoints), cardinality))


def parse_descriptor(data: bytes) -> Descriptor:
    root = _parse_xml(data)
    if root.tag != "deployment-unit":
        raise SchemaViolation(f"expected <deployment-unit>, found <{root.tag}>")
    a = _attrs(
        root,
        ("name", "version", "kind", "provider", "package-sha256", "package-location"),
        ("priority",),
    )
    if a["kind"] not in KINDS:
        raise SchemaViolation(f"unknown kind {a['kind']!r}")
    priority = _int(a["priority"], "priority", 0, 100) if "priority" in a else DEFAULT_PRIORITY

    provides: list[ServiceRef] = []
    groups: list[DependencyGroup] = []
    requirements = ResourceRequirements()
    seen: set[str] = set()
    for child in _children(root, ("provides", "dependencies", "requirements")):
        if child.tag in seen:
            raise SchemaViolation(f"<{child.tag}> appears more than once")
        seen.add(child.tag)
        if child.tag == "provides":
            _attrs(child, ())
            provides = [_service(s) for s in _children(child, ("service",))]
        elif child.tag == "dependencies":
            _attrs(child, ())
            groups = [_group(g) for g in _children(child, ("dependency",))]
        else:
            r = _attrs(child, (), ("disk-space-kib", "architecture", "os"))
            _children(child, ())
            disk = _int(r["disk-space-kib"], "disk-space-kib") if "disk-space-kib" in r else 0
            requirements = _wrap(ResourceRequirements, disk, r.get("architecture"), r.get("os"))

    def build() -> Descriptor:
        return Descriptor(
            id=UnitId(a["name"], parse_version(a["version"]), a["kind"]),
            provider=a["provider"],
            package_sha256=a["package-sha256"],
            package_location=a["package-location"],
            priority=priority,
            provides=tuple(provides),
            groups=tuple(groups),
            requirements=requirements,
        )

    return _wrap(build)


# -- serialization -----------------------------------------------------------


def _q(value: str) -> str:
    return (
        value.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def _tag(name: str, attrs: list[tuple[str, str | None]], close: bool = True) -> str:
    parts = [name] + [f'{k}="{_q(v)}"' for k, v in attrs if v is not None]
    return "<" + " ".join(parts) + ("/>" if close else ">")


def serialize_descriptor(d: Descriptor) -> bytes:
    lines = [
        XML_HEADER.rstrip("\n"),
        _tag(
            "deployment-unit",
            [
                ("name", d.id.name),
                ("version", str(d.id.version)),
                ("kind", d.id.kind),
                ("provider", d.provider),
                ("priority", str(d.priority)),
                ("package-sha256", d.package_sha256),
                ("package-location", d.package_location),
            ],
            close=False,
        ),
    ]
    if d.provides:
        lines.append("  <provides>")
        for s in d.provides:
            lines.append("    " + _tag("service", [("name", s.name), ("version", str(s.version))]))
        lines.append("  </provides>")
    else:
        lines.append("  <provides/>")
    if d.groups:
        lines.append("  <dependencies>")
        for g in d.groups:
            lines.append("    " + _tag("dependency", [("type", g.op), ("cardinality", str(g.cardinality))], close=False))
            for e in g.endpoints:
                lines.append(
                    "      "
                    + _tag("endpoint", [("service", e.service), ("range", format_range(e.range)), ("repository", e.repository)])
                )
            lines.append("    </dependency>")
        lines.append("  </dependencies>")
    else:
        lines.append("  <dependencies/>")
    req = d.requirements
    lines.append(
        "  "
        + _tag(
            "requirements",
            [("disk-space-kib", str(req.disk_space_kib)), ("architecture", req.architecture), ("os", req.os)],
        )
    )
    lines.append("</deployment-unit>")
    return ("\n".join(lines) + "\n").encode("utf-8")


# -- repository index --------------------------------------------------------

_UNIT_REQUIRED = (
    "name",
    "version",
    "kind",
    "descriptor-location",
    "package-location",
    "descriptor-sha256",
    "package-sha256",
)


def parse_repository_index(data: bytes) -> list[IndexEntry]:
    root = _parse_xml(data)
    if root.tag != "repository-index":
        raise SchemaViolation(f"expected <repository-index>, found <{root.tag}>")
    _attrs(root, ())
    entries: list[IndexEntry] = []
    seen: set[tuple] = set()
    for unit in _children(root, ("unit",)):
        a = _attrs(unit, _UNIT_REQUIRED, ("cost",))
        if a["kind"] not in KINDS:
            raise SchemaViolation(f"unknown kind {a['kind']!r}")
        provides = tuple(_service(s) for s in _children(unit, ("service",)))
        cost = _int(a["cost"], "cost") if "cost" in a else 0

        def build() -> IndexEntry:
            return IndexEntry(
                id=UnitId(a["name"], parse_version(a["version"]), a["kind"]),
                descriptor_location=a["descriptor-location"],
                package_location=a["package-location"],
                descriptor_sha256=a["descriptor-sha256"],
                package_sha256=a["package-sha256"],
                provides=provides,
                cost=cost,
            )

        entry = _wrap(build)
        if entry.key in seen:
            raise DuplicateUnit(f"{entry.id} listed more than once")
        seen.add(entry.key)
        entries.append(entry)
    return entries


def serialize_repository_index(entries: Iterable[IndexEntry]) -> bytes:
    entries = list(entries)
    if not entries:
        return (XML_HEADER + "<repository-index/>\n").encode("utf-8")
    lines = [XML_HEADER.rstrip("\n"), "<repository-index>"]
    for e in entries:
        attrs = [
            ("name", e.id.name),
            ("version", str(e.id.version)),
            ("kind", e.id.kind),
            ("descriptor-location", e.descriptor_location),
            ("package-location", e.package_location),
            ("descriptor-sha256", e.descriptor_sha256),
            ("package-sha256", e.package_sha256),
            ("cost", str(e.cost) if e.cost else None),
        ]
        if e.provides:
            lines.append("  " + _tag("unit", attrs, close=False))
            for s in e.provides:
                lines.append("    " + _tag("service", [("name", s.name), ("version", str(s.version))]))
            lines.append("  </unit>")
        else:
            lines.append("  " + _tag("unit", attrs))
    lines.append("</repository-index>")
    return ("\n".join(lines) + "\n").encode("utf-8")


def providers_by_service(entries: Iterable[IndexEntry]) -> dict[str, list[IndexEntry]]:
    """Map each service name to the entries that provide it, in document order."""
    table: dict[str, list[IndexEntry]] = {}
    for e in entries:
        for s in e.provides:
            bucket = table.setdefault(s.name, [])
            if not bucket or bucket[-1] is not e:
                bucket.append(e)
    return table
