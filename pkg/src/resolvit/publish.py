"""Build a file repository from descriptors and package payloads.

Writes ``pkgs/<name>-<version>.<kind>``, ``descriptors/<name>-<version>.<kind>.xml``
and ``index.xml`` so that the directory can be served as is, over ``file://``
or any static HTTP server.
"""

from __future__ import annotations

import os
from collections.abc import Iterable
from dataclasses import dataclass, replace
from pathlib import Path

from .codec import IndexEntry, serialize_descriptor, serialize_repository_index
from .model import Descriptor
from .repository import sha256_hex
from .state import atomic_write


@dataclass(frozen=True)
class Publication:
    descriptor: Descriptor
    package: bytes
    cost: int = 0


def publish_repository(directory: str | os.PathLike, units: Iterable[Publication]) -> list[IndexEntry]:
    """Write every unit into ``directory``.

    Each descriptor's package hash and location are overwritten to match the
    payload actually written.
    """
    root = Path(directory)
    entries = []
    for pub in units:
        d = pub.descriptor
        stem = f"{d.id.name}-{d.id.version}.{d.id.kind}"
        pkg_loc = f"pkgs/{stem}"
        d = replace(d, package_sha256=sha256_hex(pub.package), package_location=pkg_loc)
        doc = serialize_descriptor(d)
        desc_loc = f"descriptors/{stem}.xml"
        atomic_write(root / pkg_loc, pub.package)
        atomic_write(root / desc_loc, doc)
        entries.append(
            IndexEntry(
                id=d.id,
                descriptor_location=desc_loc,
                package_location=pkg_loc,
                descriptor_sha256=sha256_hex(doc),
                package_sha256=d.package_sha256,
                provides=d.provides,
                cost=pub.cost,
            )
        )
    atomic_write(root / "index.xml", serialize_repository_index(entries))
    return entries
