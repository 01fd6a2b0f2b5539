from __future__ import annotations

from pathlib import Path

from resolvit.engine import Engine, EngineConfig
from resolvit.model import (
    Descriptor,
    DependencyEndpoint,
    DependencyGroup,
    PlatformProfile,
    ResourceRequirements,
    ServiceRef,
    UnitId,
)
from resolvit.publish import Publication, publish_repository
from resolvit.repository import RepositorySource
from resolvit.state import InstallRecord, PlatformStatus
from resolvit.versions import ANY, parse_range, parse_version
from datetime import datetime, timezone

ZERO_HASH = "0" * 64
FIXED_TIME = datetime(2026, 1, 1, tzinfo=timezone.utc)
PROFILE = PlatformProfile("x86_64", "linux", 10**9)


def ep(service: str, rng: str = "*", repository: str | None = None) -> DependencyEndpoint:
    return DependencyEndpoint(service, parse_range(rng) if rng != "*" else ANY, repository)


def grp(op: str, *endpoints, card: int = 1) -> DependencyGroup:
    eps = tuple(e if isinstance(e, DependencyEndpoint) else ep(e) for e in endpoints)
    return DependencyGroup(op, eps, card)


def desc(
    name: str,
    version: str = "1.0.0",
    provides=None,
    groups=(),
    kind: str = "bundle",
    disk: int = 0,
    arch: str | None = None,
    os: str | None = None,
    priority: int = 50,
) -> Descriptor:
    """A descriptor; by default the unit provides a service named after itself at its own version."""
    v = parse_version(version)
    if provides is None:
        provides = [(name, version)]
    return Descriptor(
        id=UnitId(name, v, kind),
        provider="acme",
        package_sha256=ZERO_HASH,
        package_location=f"pkgs/{name}-{version}",
        priority=priority,
        provides=tuple(ServiceRef(s, parse_version(sv)) for s, sv in provides),
        groups=tuple(groups),
        requirements=ResourceRequirements(disk, arch, os),
    )


def package_bytes(d: Descriptor) -> bytes:
    return f"payload of {d.id}\n".encode()


def make_repo(path: Path, descriptors, costs: dict[str, int] | None = None) -> RepositorySource:
    costs = costs or {}
    publish_repository(
        path, [Publication(d, package_bytes(d), costs.get(d.id.name, 0)) for d in descriptors]
    )
    return RepositorySource.from_path(path)


def record(d: Descriptor) -> InstallRecord:
    return InstallRecord.from_descriptor(d, FIXED_TIME)


def status_of(*descriptors: Descriptor) -> PlatformStatus:
    return PlatformStatus(tuple(record(d) for d in descriptors))


def make_engine(tmp_path: Path, descriptors, costs=None, root_name: str = "platform") -> Engine:
    repo = make_repo(tmp_path / "repo", descriptors, costs)
    config = EngineConfig([repo], tmp_path / root_name, tmp_path / "cache")
    return Engine(config)
