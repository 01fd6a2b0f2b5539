"""Value types describing deployment units, their dependencies and the target platform."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from urllib.parse import urlparse

from .errors import InvalidValue
from .versions import ANY, Version, VersionRange, range_contains

KINDS = ("bundle", "native", "driver")
OPERATORS = ("AND", "OR", "XOR", "NOT")
DEFAULT_PRIORITY = 50

_TOKEN_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9._-]*$")
_HEX64_RE = re.compile(r"^[0-9a-f]{64}$")
_RELPATH_RE = re.compile(r"^[A-Za-z0-9_.+-]+(/[A-Za-z0-9_.+-]+)*$")


def check_token(value: str, what: str) -> str:
    if not isinstance(value, str) or not _TOKEN_RE.match(value):
        raise InvalidValue(f"invalid {what}: {value!r}")
    return value


def check_hex64(value: str, what: str = "sha256") -> str:
    if not isinstance(value, str) or not _HEX64_RE.match(value):
        raise InvalidValue(f"invalid {what}: {value!r}")
    return value


def check_relpath(value: str, what: str = "location") -> str:
    if not isinstance(value, str) or not _RELPATH_RE.match(value):
        raise InvalidValue(f"invalid {what}: {value!r}")
    if any(part in (".", "..") for part in value.split("/")):
        raise InvalidValue(f"{what} must not contain '.' or '..' segments: {value!r}")
    return value


def check_url(value: str) -> str:
    if not isinstance(value, str) or any(c.isspace() for c in value) or '"' in value:
        raise InvalidValue(f"invalid URL: {value!r}")
    parsed = urlparse(value)
    if parsed.scheme in ("http", "https") and parsed.netloc:
        return value
    if parsed.scheme == "file" and parsed.path.startswith("/"):
        return value
    raise InvalidValue(f"invalid URL: {value!r}")


@dataclass(frozen=True, order=False)
class UnitId:
    name: str
    version: Version
    kind: str = "bundle"

    def __post_init__(self) -> None:
        check_token(self.name, "unit name")
        if not isinstance(self.version, Version):
            raise InvalidValue(f"version must be a Version, got {self.version!r}")
        if self.kind not in KINDS:
            raise InvalidValue(f"unknown unit kind {self.kind!r}")

    def sort_key(self) -> tuple:
        return (self.name, self.version.sort_key(), self.kind)

    def __lt__(self, other: UnitId) -> bool:
        return self.sort_key() < other.sort_key()

    def __str__(self) -> str:
        return f"{self.name}@{self.version}:{self.kind}"


@dataclass(frozen=True)
class ServiceRef:
    name: str
    version: Version

    def __post_init__(self) -> None:
        check_token(self.name, "service name")
        if not isinstance(self.version, Version):
            raise InvalidValue(f"version must be a Version, got {self.version!r}")

    def __str__(self) -> str:
        return f"{self.name} {self.version}"


@dataclass(frozen=True)
class DependencyEndpoint:
    service: str
    range: VersionRange = ANY
    repository: str | None = None

    def __post_init__(self) -> None:
        check_token(self.service, "service name")
        if self.repository is not None:
            check_url(self.repository)

    def satisfied_by(self, provides) -> bool:
        return any(s.name == self.service and range_contains(self.range, s.version) for s in provides)

    def __str__(self) -> str:
        return f"{self.service} {self.range}"


@dataclass(frozen=True)
class DependencyGroup:
    op: str
    endpoints: tuple[DependencyEndpoint, ...]
    cardinality: int = 1

    def __post_init__(self) -> None:
        if self.op not in OPERATORS:
            raise InvalidValue(f"unknown dependency type {self.op!r}")
        object.__setattr__(self, "endpoints", tuple(self.endpoints))
        if not self.endpoints:
            raise InvalidValue("a dependency group needs at least one endpoint")
        if not isinstance(self.cardinality, int) or isinstance(self.cardinality, bool) or self.cardinality < 1:
            raise InvalidValue(f"cardinality must be a positive integer: {self.cardinality!r}")
        if self.op == "OR" and self.cardinality > len(self.endpoints):
            raise InvalidValue(
                f"OR cardinality {self.cardinality} exceeds endpoint count {len(self.endpoints)}"
            )


@dataclass(frozen=True)
class ResourceRequirements:
    disk_space_kib: int = 0
    architecture: str | None = None
    os: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.disk_space_kib, int) or isinstance(self.disk_space_kib, bool) or self.disk_space_kib < 0:
            raise InvalidValue(f"disk space must be a non-negative integer: {self.disk_space_kib!r}")
        if self.architecture is not None:
            check_token(self.architecture, "architecture")
        if self.os is not None:
            check_token(self.os, "os")


@dataclass(frozen=True)
class Descriptor:
    id: UnitId
    provider: str
    package_sha256: str
    package_location: str
    priority: int = DEFAULT_PRIORITY
    provides: tuple[ServiceRef, ...] = ()
    groups: tuple[DependencyGroup, ...] = ()
    requirements: ResourceRequirements = field(default_factory=ResourceRequirements)

    def __post_init__(self) -> None:
        object.__setattr__(self, "provides", tuple(self.provides))
        object.__setattr__(self, "groups", tuple(self.groups))
        check_token(self.provider, "provider")
        check_hex64(self.package_sha256, "package-sha256")
        check_relpath(self.package_location, "package-location")
        if not isinstance(self.priority, int) or isinstance(self.priority, bool) or not 0 <= self.priority <= 100:
            raise InvalidValue(f"priority must be an integer in [0,100]: {self.priority!r}")
        if len(set(self.provides)) != len(self.provides):
            raise InvalidValue(f"{self.id} declares the same service twice")

    def provides_service(self, service: str, r: VersionRange) -> bool:
        return any(s.name == service and range_contains(r, s.version) for s in self.provides)


@dataclass(frozen=True)
class PlatformProfile:
    architecture: str
    os: str
    disk_available_kib: int
    multi_version_kinds: frozenset[str] = frozenset({"bundle"})

    def __post_init__(self) -> None:
        check_token(self.architecture, "architecture")
        check_token(self.os, "os")
        object.__setattr__(self, "multi_version_kinds", frozenset(self.multi_version_kinds))
        if not self.multi_version_kinds <= set(KINDS):
            raise InvalidValue(f"unknown kinds in {sorted(self.multi_version_kinds)}")
        if not isinstance(self.disk_available_kib, int) or self.disk_available_kib < 0:
            raise InvalidValue(f"available disk must be a non-negative integer: {self.disk_available_kib!r}")
