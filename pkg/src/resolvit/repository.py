"""Repository access with a content-addressed local cache.

Cache layout under ``cache_dir``::

    meta/<sha256>    index and descriptor documents
    pkgs/<sha256>    package files
    refs/<sha256 of base url>   "<index sha256>\\t<fetched-at>" for the last good index

Every byte served from the cache is re-hashed before use.
"""

from __future__ import annotations

import fcntl
import hashlib
import logging
import os
import urllib.error
import urllib.request
from collections.abc import Iterable
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from urllib.parse import urlparse
from urllib.request import url2pathname

from .codec import IndexEntry, parse_descriptor, parse_repository_index
from .errors import IntegrityError, InvalidValue, NotFound, RepositoryUnavailable
from .model import Descriptor, check_token
from .state import atomic_write
from .versions import VersionRange, range_contains

log = logging.getLogger(__name__)

HTTP_TIMEOUT = 10.0
INDEX_NAME = "index.xml"
CACHE_ENV = "RESOLVIT_CACHE"


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def resolve_cache_dir(cache_dir: str | os.PathLike | None = None) -> Path:
    """An explicit directory wins, then $RESOLVIT_CACHE, then ~/.cache/resolvit."""
    if cache_dir is not None:
        return Path(cache_dir)
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "resolvit"


@dataclass(frozen=True)
class RepositorySource:
    base_url: str
    trust_label: str = "default"

    def __post_init__(self) -> None:
        url = self.base_url.rstrip("/")
        parsed = urlparse(url)
        if parsed.scheme in ("http", "https"):
            if not parsed.netloc:
                raise InvalidValue(f"repository URL lacks a host: {self.base_url!r}")
        elif parsed.scheme == "file":
            if not parsed.path.startswith("/"):
                raise InvalidValue(f"file repository must be absolute: {self.base_url!r}")
        else:
            raise InvalidValue(f"unsupported repository scheme: {self.base_url!r}")
        check_token(self.trust_label, "trust label")
        object.__setattr__(self, "base_url", url)

    @classmethod
    def from_path(cls, path: str | os.PathLike, trust_label: str = "default") -> RepositorySource:
        return cls(Path(path).resolve().as_uri(), trust_label)

    def url_for(self, relpath: str) -> str:
        return f"{self.base_url}/{relpath}"


@dataclass(frozen=True)
class FetchRecord:
    url: str
    outcome: str  # network | cache-hit | error
    what: str  # index | descriptor | package


@dataclass
class FetchLog:
    records: list[FetchRecord] = field(default_factory=list)

    def add(self, url: str, outcome: str, what: str) -> None:
        self.records.append(FetchRecord(url, outcome, what))

    def count(self, what: str | None = None, outcome: str | None = None) -> int:
        return sum(
            1 for r in self.records if (what is None or r.what == what) and (outcome is None or r.outcome == outcome)
        )


@dataclass(frozen=True)
class IndexSnapshot:
    source: RepositorySource
    entries: tuple[IndexEntry, ...]
    fetched_at: datetime
    stale: bool = False


# -- transport ---------------------------------------------------------------


def fetch_url(url: str) -> bytes:
    """GET ``url``. Missing resources raise NotFound, every other failure RepositoryUnavailable."""
    parsed = urlparse(url)
    if parsed.scheme == "file":
        path = Path(url2pathname(parsed.path))
        try:
            return path.read_bytes()
        except FileNotFoundError:
            if not _nearest_existing_dir(path):
                raise RepositoryUnavailable(f"repository directory missing for {url}") from None
            raise NotFound(url) from None
        except OSError as exc:
            raise RepositoryUnavailable(f"{url}: {exc}") from None
    try:
        with urllib.request.urlopen(url, timeout=HTTP_TIMEOUT) as resp:
            status = getattr(resp, "status", 200)
            if not 200 <= status < 300:
                raise RepositoryUnavailable(f"{url}: HTTP {status}")
            return resp.read()
    except urllib.error.HTTPError as exc:
        if exc.code == 404:
            raise NotFound(url) from None
        raise RepositoryUnavailable(f"{url}: HTTP {exc.code}") from None
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise RepositoryUnavailable(f"{url}: {exc}") from None


def _nearest_existing_dir(path: Path) -> bool:
    # a missing file inside an existing repository tree is NotFound; a missing tree is an outage
    for parent in path.parents:
        if (parent / INDEX_NAME).exists():
            return True
    return False


# -- cache helpers -----------------------------------------------------------


def _meta_path(cache_dir: Path, digest: str) -> Path:
    return Path(cache_dir) / "meta" / digest


def _pkg_path(cache_dir: Path, digest: str) -> Path:
    return Path(cache_dir) / "pkgs" / digest


def _ref_path(cache_dir: Path, source: RepositorySource) -> Path:
    return Path(cache_dir) / "refs" / sha256_hex(source.base_url.encode("utf-8"))


@contextmanager
def cache_write_lock(cache_dir: Path):
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    with open(cache_dir / ".lock", "a+b") as fh:
        fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh.fileno(), fcntl.LOCK_UN)


def _read_verified(path: Path, digest: str) -> bytes | None:
    """Return cached bytes if present and intact; drop the file otherwise."""
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        return None
    if sha256_hex(data) == digest:
        return data
    log.warning("discarding corrupted cache entry %s", path)
    try:
        path.unlink()
    except FileNotFoundError:
        pass
    return None


# -- operations --------------------------------------------------------------


def refresh_index(
    source: RepositorySource, cache_dir: str | os.PathLike, fetch_log: FetchLog | None = None
) -> IndexSnapshot:
    cache_dir = Path(cache_dir)
    url = source.url_for(INDEX_NAME)
    try:
        data = fetch_url(url)
    except (RepositoryUnavailable, NotFound) as exc:
        if fetch_log is not None:
            fetch_log.add(url, "error", "index")
        cached = _cached_index(source, cache_dir)
        if cached is None:
            raise RepositoryUnavailable(f"{source.base_url} unreachable and not cached: {exc}") from None
        log.warning("%s unreachable, using cached index from %s", source.base_url, cached.fetched_at)
        return cached
    entries = parse_repository_index(data)
    if fetch_log is not None:
        fetch_log.add(url, "network", "index")
    digest = sha256_hex(data)
    now = datetime.now(timezone.utc).replace(microsecond=0)
    with cache_write_lock(cache_dir):
        meta = _meta_path(cache_dir, digest)
        if _read_verified(meta, digest) is None:
            atomic_write(meta, data)
        atomic_write(_ref_path(cache_dir, source), f"{digest}\t{now.isoformat()}\n".encode())
    return IndexSnapshot(source, tuple(entries), now, stale=False)


def _cached_index(source: RepositorySource, cache_dir: Path) -> IndexSnapshot | None:
    try:
        digest, fetched = _ref_path(cache_dir, source).read_text(encoding="utf-8").strip().split("\t")
        fetched_at = datetime.fromisoformat(fetched)
    except (FileNotFoundError, ValueError):
        return None
    data = _read_verified(_meta_path(cache_dir, digest), digest)
    if data is None:
        return None
    return IndexSnapshot(source, tuple(parse_repository_index(data)), fetched_at, stale=True)


def find_providers(service: str, r: VersionRange, snapshots: Iterable[IndexSnapshot]) -> list[IndexEntry]:
    return [entry for entry, _ in locate_providers(service, r, snapshots)]


def locate_providers(
    service: str, r: VersionRange, snapshots: Iterable[IndexSnapshot]
) -> list[tuple[IndexEntry, RepositorySource]]:
    """Like find_providers, paired with the source each entry was taken from."""
    seen: set[tuple] = set()
    found: list[tuple[int, IndexEntry, RepositorySource]] = []
    for order, snap in enumerate(snapshots):
        for entry in snap.entries:
            if entry.key in seen:
                continue
            seen.add(entry.key)
            if any(s.name == service and range_contains(r, s.version) for s in entry.provides):
                found.append((order, entry, snap.source))
    found.sort(key=lambda t: t[0])
    found.sort(key=lambda t: t[1].id.version.sort_key(), reverse=True)
    found.sort(key=lambda t: t[1].id.name)
    return [(entry, source) for _, entry, source in found]


def fetch_descriptor(
    entry: IndexEntry, source: RepositorySource, cache_dir: str | os.PathLike, fetch_log: FetchLog | None = None
) -> Descriptor:
    cache_dir = Path(cache_dir)
    url = source.url_for(entry.descriptor_location)
    path = _meta_path(cache_dir, entry.descriptor_sha256)
    data = _read_verified(path, entry.descriptor_sha256)
    if data is not None:
        if fetch_log is not None:
            fetch_log.add(url, "cache-hit", "descriptor")
    else:
        try:
            data = fetch_url(url)
        except (NotFound, RepositoryUnavailable):
            if fetch_log is not None:
                fetch_log.add(url, "error", "descriptor")
            raise
        if sha256_hex(data) != entry.descriptor_sha256:
            if fetch_log is not None:
                fetch_log.add(url, "error", "descriptor")
            raise IntegrityError(f"{url}: descriptor hash mismatch")
        if fetch_log is not None:
            fetch_log.add(url, "network", "descriptor")
        atomic_write(path, data)
    descriptor = parse_descriptor(data)
    if descriptor.id != entry.id:
        raise IntegrityError(f"{url} describes {descriptor.id}, index says {entry.id}")
    return descriptor


def fetch_package(
    entry: IndexEntry, source: RepositorySource, cache_dir: str | os.PathLike, fetch_log: FetchLog | None = None
) -> Path:
    cache_dir = Path(cache_dir)
    url = source.url_for(entry.package_location)
    path = _pkg_path(cache_dir, entry.package_sha256)
    if path.exists():
        if file_sha256(path) == entry.package_sha256:
            if fetch_log is not None:
                fetch_log.add(url, "cache-hit", "package")
            return path
        log.warning("discarding corrupted cached package %s", path)
        path.unlink()
    try:
        data = fetch_url(url)
    except (NotFound, RepositoryUnavailable):
        if fetch_log is not None:
            fetch_log.add(url, "error", "package")
        raise
    if sha256_hex(data) != entry.package_sha256:
        if fetch_log is not None:
            fetch_log.add(url, "error", "package")
        raise IntegrityError(f"{url}: package hash mismatch")
    if fetch_log is not None:
        fetch_log.add(url, "network", "package")
    atomic_write(path, data)
    return path


def cached_package(cache_dir: str | os.PathLike, digest: str) -> Path | None:
    path = _pkg_path(Path(cache_dir), digest)
    if path.exists() and file_sha256(path) == digest:
        return path
    return None


def store_package(cache_dir: str | os.PathLike, data: bytes) -> Path:
    digest = sha256_hex(data)
    path = _pkg_path(Path(cache_dir), digest)
    if cached_package(cache_dir, digest) is None:
        atomic_write(path, data)
    return path


class RepositorySet:
    """The configured repositories of one engine run, plus lazily loaded hint repositories.

    Snapshots are refreshed once per instance; the fetch log is shared.
    """

    def __init__(self, sources: Iterable[RepositorySource], cache_dir: str | os.PathLike, fetch_log: FetchLog | None = None):
        self.sources = list(sources)
        self.cache_dir = Path(cache_dir)
        self.log = fetch_log if fetch_log is not None else FetchLog()
        self.warnings: list[str] = []
        self._snapshots: dict[str, IndexSnapshot | None] = {}

    def _load(self, source: RepositorySource) -> IndexSnapshot | None:
        if source.base_url not in self._snapshots:
            try:
                snap = refresh_index(source, self.cache_dir, self.log)
            except RepositoryUnavailable as exc:
                self.warnings.append(str(exc))
                snap = None
            else:
                if snap.stale:
                    self.warnings.append(
                        f"{source.base_url} unreachable; using cached index from {snap.fetched_at.isoformat()}"
                    )
            self._snapshots[source.base_url] = snap
        return self._snapshots[source.base_url]

    def snapshots(self) -> list[IndexSnapshot]:
        snaps = [s for s in (self._load(src) for src in self.sources) if s is not None]
        if not snaps:
            raise RepositoryUnavailable("no repository is reachable and none is cached")
        return snaps

    def snapshots_for(self, hint: str | None) -> list[IndexSnapshot]:
        """Snapshots to search for an endpoint: the hinted repository first, then the configured ones."""
        snaps = self.snapshots()
        if hint is None:
            return snaps
        try:
            hinted = RepositorySource(hint, "hint")
        except InvalidValue:
            return snaps
        first = self._load(hinted)
        if first is None:
            return snaps
        return [first] + [s for s in snaps if s.source.base_url != first.source.base_url]

    def source_of(self, entry: IndexEntry) -> RepositorySource:
        for snap in self._snapshots.values():
            if snap is not None and any(e.key == entry.key and e == entry for e in snap.entries):
                return snap.source
        raise NotFound(f"{entry.id} is not in any loaded repository")

    def descriptor(self, entry: IndexEntry, source: RepositorySource | None = None) -> Descriptor:
        return fetch_descriptor(entry, source or self.source_of(entry), self.cache_dir, self.log)

    def package(self, entry: IndexEntry, source: RepositorySource | None = None) -> Path:
        return fetch_package(entry, source or self.source_of(entry), self.cache_dir, self.log)
