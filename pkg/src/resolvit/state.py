"""Persistent platform status: which units are installed, and what they provide.

The status file is stanza text. A header stanza carries the format version;
each following stanza is one install record with fixed key order::

    Format: 1

    Name: org.example.log
    Version: 1.0.0
    Kind: bundle
    Provider: example
    Provides: org.example.LogService 1.0.0
    Package-SHA256: <hex64>
    Installed-At: 2026-01-01T00:00:00Z
    Descriptor: <base64 of the canonical descriptor document>
"""

from __future__ import annotations

import base64
import binascii
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .codec import parse_descriptor, serialize_descriptor
from .errors import (
    CorruptStateError,
    DuplicateInstall,
    InvalidValue,
    MalformedDocument,
    MalformedVersion,
    NotInstalledError,
)
from .model import KINDS, Descriptor, ServiceRef, UnitId, check_hex64, check_token
from .versions import VersionRange, parse_version, range_contains

STATUS_FORMAT_VERSION = 1
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
RECORD_KEYS = ("Name", "Version", "Kind", "Provider", "Provides", "Package-SHA256", "Installed-At", "Descriptor")


def utcnow() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


@dataclass(frozen=True)
class InstallRecord:
    id: UnitId
    descriptor: Descriptor
    installed_at: datetime
    provides: tuple[ServiceRef, ...] = None  # type: ignore[assignment]
    package_sha256: str = ""

    def __post_init__(self) -> None:
        if self.descriptor.id != self.id:
            raise InvalidValue(f"record {self.id} embeds descriptor of {self.descriptor.id}")
        if self.provides is None:
            object.__setattr__(self, "provides", self.descriptor.provides)
        object.__setattr__(self, "provides", tuple(self.provides))
        if not self.package_sha256:
            object.__setattr__(self, "package_sha256", self.descriptor.package_sha256)
        check_hex64(self.package_sha256, "package-sha256")
        ts = self.installed_at
        if ts.tzinfo is None or ts.utcoffset() != timezone.utc.utcoffset(None) or ts.microsecond:
            raise InvalidValue(f"installed-at must be a whole-second UTC timestamp: {ts!r}")

    @classmethod
    def from_descriptor(cls, descriptor: Descriptor, installed_at: datetime | None = None) -> InstallRecord:
        return cls(descriptor.id, descriptor, installed_at or utcnow())


@dataclass(frozen=True)
class PlatformStatus:
    records: tuple[InstallRecord, ...] = ()
    format_version: int = STATUS_FORMAT_VERSION

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(sorted(self.records, key=lambda r: r.id.sort_key())))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def installed(self) -> frozenset[UnitId]:
        return frozenset(r.id for r in self.records)

    def get(self, unit: UnitId) -> InstallRecord | None:
        for r in self.records:
            if r.id == unit:
                return r
        return None


@dataclass(frozen=True)
class Install:
    record: InstallRecord


@dataclass(frozen=True)
class Remove:
    unit: UnitId


# -- queries and changes -----------------------------------------------------


def query_installed(status: PlatformStatus, service: str, r: VersionRange) -> list[InstallRecord]:
    hits = []
    for rec in status.records:
        versions = [s.version for s in rec.provides if s.name == service and range_contains(r, s.version)]
        if versions:
            hits.append((max(versions), rec))
    # newest provided version first, unit order as tie-break
    hits.sort(key=lambda h: h[1].id.sort_key())
    hits.sort(key=lambda h: h[0].sort_key(), reverse=True)
    return [rec for _, rec in hits]


def apply_change(
    status: PlatformStatus,
    change: Install | Remove,
    multi_version_kinds: frozenset[str] = frozenset({"bundle"}),
) -> PlatformStatus:
    if isinstance(change, Install):
        new = change.record.id
        for rec in status.records:
            if rec.id == new:
                raise DuplicateInstall(f"{new} is already installed")
            if new.kind not in multi_version_kinds and rec.id.name == new.name and rec.id.kind == new.kind:
                raise DuplicateInstall(f"{new} would coexist with {rec.id}; {new.kind} units are single-version")
        return PlatformStatus(status.records + (change.record,), status.format_version)
    if isinstance(change, Remove):
        kept = tuple(r for r in status.records if r.id != change.unit)
        if len(kept) == len(status.records):
            raise NotInstalledError(f"{change.unit} is not installed")
        return PlatformStatus(kept, status.format_version)
    raise TypeError(f"unsupported change {change!r}")


# -- stanza codec ------------------------------------------------------------


def format_status(status: PlatformStatus) -> bytes:
    stanzas = [f"Format: {status.format_version}"]
    for rec in status.records:
        provides = ", ".join(f"{s.name} {s.version}" for s in rec.provides)
        lines = [
            f"Name: {rec.id.name}",
            f"Version: {rec.id.version}",
            f"Kind: {rec.id.kind}",
            f"Provider: {rec.descriptor.provider}",
            f"Provides: {provides}".rstrip(),
            f"Package-SHA256: {rec.package_sha256}",
            f"Installed-At: {rec.installed_at.strftime(TIMESTAMP_FORMAT)}",
            "Descriptor: " + base64.b64encode(serialize_descriptor(rec.descriptor)).decode("ascii"),
        ]
        stanzas.append("\n".join(lines))
    return ("\n\n".join(stanzas) + "\n").encode("utf-8")


def _split_stanzas(text: str) -> list[list[str]]:
    stanzas: list[list[str]] = []
    current: list[str] = []
    for line in text.split("\n"):
        if line == "":
            if current:
                stanzas.append(current)
                current = []
        else:
            current.append(line)
    if current:
        stanzas.append(current)
    return stanzas


def _fields(lines: list[str], ordinal: int) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in lines:
        key, sep, value = line.partition(":")
        if not sep or not key or key != key.strip():
            raise CorruptStateError(ordinal, f"malformed line {line!r}")
        if value and not value.startswith(" "):
            raise CorruptStateError(ordinal, f"malformed line {line!r}")
        if key in out:
            raise CorruptStateError(ordinal, f"duplicate field {key}")
        out[key] = value[1:] if value else ""
    return out


def _parse_provides(value: str, ordinal: int) -> tuple[ServiceRef, ...]:
    if value == "":
        return ()
    refs = []
    for item in value.split(", "):
        name, sep, ver = item.partition(" ")
        if not sep:
            raise CorruptStateError(ordinal, f"malformed Provides item {item!r}")
        try:
            refs.append(ServiceRef(name, parse_version(ver)))
        except (InvalidValue, MalformedVersion) as exc:
            raise CorruptStateError(ordinal, f"bad Provides item {item!r}: {exc}") from None
    return tuple(refs)


def _parse_record(lines: list[str], ordinal: int) -> InstallRecord:
    f = _fields(lines, ordinal)
    for key in RECORD_KEYS:
        if key not in f:
            raise CorruptStateError(ordinal, f"missing {key} field")
    extra = sorted(set(f) - set(RECORD_KEYS))
    if extra:
        raise CorruptStateError(ordinal, f"unknown field(s) {', '.join(extra)}")
    if list(f) != list(RECORD_KEYS):
        raise CorruptStateError(ordinal, "fields out of canonical order")
    try:
        check_token(f["Name"], "name")
        version = parse_version(f["Version"])
        if f["Kind"] not in KINDS:
            raise InvalidValue(f"unknown kind {f['Kind']!r}")
        check_token(f["Provider"], "provider")
        check_hex64(f["Package-SHA256"], "Package-SHA256")
        installed_at = datetime.strptime(f["Installed-At"], TIMESTAMP_FORMAT).replace(tzinfo=timezone.utc)
    except (InvalidValue, MalformedVersion, ValueError) as exc:
        raise CorruptStateError(ordinal, str(exc)) from None
    provides = _parse_provides(f["Provides"], ordinal)
    try:
        raw = base64.b64decode(f["Descriptor"].encode("ascii"), validate=True)
        descriptor = parse_descriptor(raw)
    except (binascii.Error, UnicodeEncodeError, ValueError) as exc:
        raise CorruptStateError(ordinal, f"undecodable Descriptor: {exc}") from None
    except MalformedDocument as exc:
        raise CorruptStateError(ordinal, f"invalid embedded descriptor: {exc}") from None
    unit = UnitId(f["Name"], version, f["Kind"])
    if descriptor.id != unit:
        raise CorruptStateError(ordinal, f"embedded descriptor is for {descriptor.id}, not {unit}")
    if descriptor.provider != f["Provider"]:
        raise CorruptStateError(ordinal, "Provider disagrees with embedded descriptor")
    if descriptor.provides != provides:
        raise CorruptStateError(ordinal, "Provides disagrees with embedded descriptor")
    if descriptor.package_sha256 != f["Package-SHA256"]:
        raise CorruptStateError(ordinal, "Package-SHA256 disagrees with embedded descriptor")
    return InstallRecord(unit, descriptor, installed_at, provides, f["Package-SHA256"])


def parse_status(data: bytes) -> PlatformStatus:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptStateError(0, f"not UTF-8: {exc}") from None
    if "\r" in text:
        raise CorruptStateError(0, "CR characters are not allowed")
    stanzas = _split_stanzas(text)
    if not stanzas:
        raise CorruptStateError(0, "missing Format header")
    header = _fields(stanzas[0], 0)
    if set(header) != {"Format"}:
        raise CorruptStateError(0, "header stanza must hold only the Format field")
    if header["Format"] != str(STATUS_FORMAT_VERSION):
        raise CorruptStateError(0, f"unsupported status format {header['Format']!r}")
    records = [_parse_record(lines, i) for i, lines in enumerate(stanzas[1:], start=1)]
    seen: set[UnitId] = set()
    for i, rec in enumerate(records, start=1):
        if rec.id in seen:
            raise CorruptStateError(i, f"{rec.id} recorded twice")
        seen.add(rec.id)
    return PlatformStatus(tuple(records), STATUS_FORMAT_VERSION)


# -- files -------------------------------------------------------------------


def atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def load_status(path: str | os.PathLike) -> PlatformStatus:
    path = Path(path)
    if not path.exists():
        return PlatformStatus()
    return parse_status(path.read_bytes())


def save_status(path: str | os.PathLike, status: PlatformStatus) -> None:
    atomic_write(Path(path), format_status(status))


@dataclass
class StateStore:
    """The status file of one platform root."""

    path: Path
    multi_version_kinds: frozenset[str] = field(default=frozenset({"bundle"}))

    def __post_init__(self) -> None:
        self.path = Path(self.path)

    def load(self) -> PlatformStatus:
        return load_status(self.path)

    def save(self, status: PlatformStatus) -> None:
        save_status(self.path, status)

    def apply(self, change: Install | Remove) -> PlatformStatus:
        status = apply_change(self.load(), change, self.multi_version_kinds)
        self.save(status)
        return status
