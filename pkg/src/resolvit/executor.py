"""Execution phase: ordered, journaled, all-or-nothing application of a plan.

The journal ``<root>/.resolvit.journal`` is written ahead of every action and
is enough on its own to undo a half-finished run after a crash. Lines are
``SEQ VERB NAME VERSION KIND UNDO-HASH STATE`` separated by tabs; the last
line for a sequence number gives its current state (pending, done, undone).
A copy of the pre-run status file sits next to it so that removed install
records come back exactly as they were.
"""

from __future__ import annotations

import fcntl
import hashlib
import logging
import os
import shutil
import time
from collections.abc import Iterable, Mapping, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    ExecutionFailed,
    InvalidValue,
    LockHeld,
    NotInstalledError,
    PlatformDirty,
    RollbackFailed,
)
from .model import KINDS, Descriptor, UnitId
from .repository import cached_package, file_sha256, store_package
from .resolver import CandidateSolution, Conflict, DependencyTree, dependents_of
from .state import Install, InstallRecord, PlatformStatus, Remove, StateStore, atomic_write, parse_status
from .versions import parse_version

log = logging.getLogger(__name__)

LOCK_NAME = ".resolvit.lock"
JOURNAL_NAME = ".resolvit.journal"
JOURNAL_STATUS_NAME = ".resolvit.journal.status"
DIRTY_NAME = ".resolvit.dirty"
STATUS_NAME = "status"
_ABSENT = b"ABSENT\n"


# -- plan --------------------------------------------------------------------


@dataclass(frozen=True)
class Action:
    verb: str  # install | remove
    unit: UnitId
    package_path: Path | None = None
    descriptor: Descriptor | None = None

    def __post_init__(self) -> None:
        if self.verb not in ("install", "remove"):
            raise InvalidValue(f"unknown action verb {self.verb!r}")

    def line(self) -> str:
        return f"{self.verb}\t{self.unit.name}\t{self.unit.version}\t{self.unit.kind}\n"

    def __str__(self) -> str:
        return f"{self.verb} {self.unit}"


@dataclass(frozen=True)
class ActionPlan:
    actions: tuple[Action, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions", tuple(self.actions))

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def encode(self) -> bytes:
        return "".join(a.line() for a in self.actions).encode("utf-8")

    @property
    def plan_hash(self) -> str:
        return hashlib.sha256(self.encode()).hexdigest()


def _dependency_edges(descriptors: Mapping[UnitId, Descriptor]) -> dict[UnitId, set[UnitId]]:
    """u -> units among ``descriptors`` that meet one of u's AND/OR/XOR endpoints."""
    deps: dict[UnitId, set[UnitId]] = {u: set() for u in descriptors}
    for u, d in descriptors.items():
        for g in d.groups:
            if g.op == "NOT":
                continue
            for ep in g.endpoints:
                for w, dw in descriptors.items():
                    if w != u and ep.satisfied_by(dw.provides):
                        deps[u].add(w)
    return deps


def _reach(deps: Mapping[UnitId, set[UnitId]]) -> dict[UnitId, set[UnitId]]:
    out = {}
    for u in deps:
        seen, stack = set(), list(deps[u])
        while stack:
            w = stack.pop()
            if w not in seen:
                seen.add(w)
                stack.extend(deps[w])
        out[u] = seen
    return out


def _unit_order_key(u: UnitId) -> tuple:
    # name ascending, version descending
    return (u.name, tuple(-x for x in u.version.sort_key()[:4]), _InvBytes(u.version.sort_key()[4]), u.kind)


class _InvBytes:
    __slots__ = ("b",)

    def __init__(self, b: bytes):
        self.b = b

    def __lt__(self, other: _InvBytes) -> bool:
        return other.b < self.b

    def __eq__(self, other: object) -> bool:
        return isinstance(other, _InvBytes) and self.b == other.b


def leaves_first(descriptors: Mapping[UnitId, Descriptor], reverse: bool = False) -> list[UnitId]:
    """Dependencies before dependents (dependents first with ``reverse``).

    Members of a dependency cycle go in canonical order.
    """
    deps = _dependency_edges(descriptors)
    if reverse:
        flipped: dict[UnitId, set[UnitId]] = {u: set() for u in deps}
        for u, ws in deps.items():
            for w in ws:
                flipped[w].add(u)
        deps = flipped
    reach = _reach(deps)
    # edges inside a cycle do not constrain the order
    blocking = {u: {w for w in deps[u] if u not in reach[w]} for u in deps}
    done: list[UnitId] = []
    placed: set[UnitId] = set()
    pending = sorted(deps, key=_unit_order_key)
    while pending:
        for u in pending:
            if blocking[u] <= placed:
                break
        else:  # pragma: no cover - cycle edges are excluded above
            raise AssertionError("no installable unit; dependency graph inconsistent")
        pending.remove(u)
        placed.add(u)
        done.append(u)
    return done


def order_actions(
    solution: CandidateSolution,
    tree: DependencyTree,
    conflicts: Sequence[Conflict] = (),
    status: PlatformStatus | None = None,
) -> ActionPlan:
    for c in conflicts:
        if c.resolution != "remove":
            raise InvalidValue(f"unresolved conflict in plan: {c}")
    displaced = set(solution.displaced) | {c.offending for c in conflicts}
    removed_desc = {}
    for u in displaced:
        if status is not None and status.get(u) is not None:
            removed_desc[u] = status.get(u).descriptor
        elif u in tree.nodes:
            removed_desc[u] = tree.nodes[u].descriptor
        else:
            raise InvalidValue(f"no descriptor known for displaced unit {u}")
    removals = leaves_first(removed_desc, reverse=True)
    installs = leaves_first({u: tree.nodes[u].descriptor for u in solution.selected})
    actions = [Action("remove", u) for u in removals]
    actions += [Action("install", u, descriptor=tree.nodes[u].descriptor) for u in installs]
    return ActionPlan(tuple(actions))


def decode_plan(data: bytes) -> list[tuple[str, UnitId]]:
    out = []
    for line in data.decode("utf-8").splitlines():
        verb, name, version, kind = line.split("\t")
        out.append((verb, UnitId(name, parse_version(version), kind)))
    return out


# -- layer managers ----------------------------------------------------------


class LayerManager:
    """Installs and removes units of one kind inside a platform root."""

    kind = "bundle"

    def unit_dir(self, unit: UnitId, platform_root: Path) -> Path:
        return Path(platform_root) / unit.kind / f"{unit.name}-{unit.version}"

    def install(self, unit: UnitId, package_path: Path, platform_root: Path) -> None:
        raise NotImplementedError

    def remove(self, unit: UnitId, platform_root: Path) -> None:
        raise NotImplementedError

    def installed_package(self, unit: UnitId, platform_root: Path) -> Path | None:
        return None


class SandboxLayerManager(LayerManager):
    """Copies the package under ``<root>/<kind>/<name>-<version>/`` next to a receipt file."""

    def __init__(self, kind: str):
        if kind not in KINDS:
            raise InvalidValue(f"unknown unit kind {kind!r}")
        self.kind = kind

    def install(self, unit: UnitId, package_path: Path, platform_root: Path) -> None:
        target = self.unit_dir(unit, platform_root)
        if target.exists():
            raise FileExistsError(f"{target} already exists")
        digest = file_sha256(package_path)
        staging = target.parent / f".{target.name}.partial"
        if staging.exists():
            shutil.rmtree(staging)
        staging.mkdir(parents=True)
        shutil.copyfile(package_path, staging / "package")
        (staging / "receipt").write_text(
            f"{unit.name}\t{unit.version}\t{unit.kind}\t{digest}\n", encoding="utf-8"
        )
        os.replace(staging, target)

    def remove(self, unit: UnitId, platform_root: Path) -> None:
        target = self.unit_dir(unit, platform_root)
        staging = target.parent / f".{target.name}.partial"
        if staging.exists():
            shutil.rmtree(staging)
        if target.exists():
            shutil.rmtree(target)
        try:
            target.parent.rmdir()
        except OSError:
            pass

    def installed_package(self, unit: UnitId, platform_root: Path) -> Path | None:
        path = self.unit_dir(unit, platform_root) / "package"
        return path if path.exists() else None


def default_managers() -> dict[str, LayerManager]:
    return {kind: SandboxLayerManager(kind) for kind in KINDS}


# -- locking -----------------------------------------------------------------


@contextmanager
def platform_lock(platform_root: Path):
    """Exclusive, non-blocking lock on a platform root; the lock file is gone afterwards."""
    path = Path(platform_root) / LOCK_NAME
    Path(platform_root).mkdir(parents=True, exist_ok=True)
    while True:
        fh = open(path, "a+b")
        try:
            fcntl.flock(fh.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            fh.close()
            raise LockHeld(f"{platform_root} is locked by another deployment") from None
        # the previous holder may have unlinked the file between open and flock
        try:
            if os.fstat(fh.fileno()).st_ino == os.stat(path).st_ino:
                break
        except FileNotFoundError:
            pass
        fh.close()
    try:
        yield
    finally:
        try:
            os.unlink(path)
        except FileNotFoundError:
            pass
        fcntl.flock(fh.fileno(), fcntl.LOCK_UN)
        fh.close()


# -- journal -----------------------------------------------------------------


@dataclass
class JournalRecord:
    seq: int
    verb: str
    unit: UnitId
    undo_hash: str
    state: str

    def line(self) -> str:
        u = self.unit
        return f"{self.seq}\t{self.verb}\t{u.name}\t{u.version}\t{u.kind}\t{self.undo_hash}\t{self.state}\n"


@dataclass
class Journal:
    path: Path
    records: dict[int, JournalRecord] = field(default_factory=dict)

    @classmethod
    def open(cls, path: Path) -> Journal:
        journal = cls(Path(path))
        if journal.path.exists():
            for n, line in enumerate(journal.path.read_text(encoding="utf-8").splitlines(), start=1):
                parts = line.split("\t")
                if len(parts) != 7:
                    # a torn final line from a crash mid-append is ignored
                    log.warning("ignoring malformed journal line %d", n)
                    continue
                seq, verb, name, version, kind, undo, state = parts
                journal.records[int(seq)] = JournalRecord(
                    int(seq), verb, UnitId(name, parse_version(version), kind), undo, state
                )
        return journal

    def append(self, rec: JournalRecord) -> None:
        self.records[rec.seq] = rec
        with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(rec.line())
            fh.flush()
            os.fsync(fh.fileno())

    def set_state(self, seq: int, state: str) -> None:
        rec = self.records[seq]
        self.append(JournalRecord(rec.seq, rec.verb, rec.unit, rec.undo_hash, state))

    def open_records(self) -> list[JournalRecord]:
        """Records still to undo, newest first."""
        return [r for r in sorted(self.records.values(), key=lambda r: -r.seq) if r.state in ("pending", "done")]


@dataclass
class ExecutionReport:
    actions: list[tuple[Action, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


def execute_plan(
    plan: ActionPlan,
    managers: Mapping[str, LayerManager],
    store: StateStore,
    platform_root: str | os.PathLike,
    cache_dir: str | os.PathLike,
    *,
    locked: bool = False,
    clock=None,
) -> ExecutionReport:
    """Apply every action or none.

    ``locked=True`` means the caller already holds the platform lock.
    """
    root = Path(platform_root)
    if not locked:
        with platform_lock(root):
            return execute_plan(plan, managers, store, root, cache_dir, locked=True, clock=clock)
    if (root / DIRTY_NAME).exists():
        raise PlatformDirty(f"{root} needs manual repair after a failed rollback")
    if (root / JOURNAL_NAME).exists():
        raise RollbackFailed(f"{root} holds an unfinished journal; run recovery first")
    report = ExecutionReport()
    if not plan.actions:
        return report
    for a in plan.actions:
        if a.verb == "install" and (a.package_path is None or a.descriptor is None):
            raise InvalidValue(f"{a} lacks a verified package or descriptor")

    snapshot = store.path.read_bytes() if store.path.exists() else _ABSENT
    atomic_write(root / JOURNAL_STATUS_NAME, snapshot)
    journal = Journal(root / JOURNAL_NAME)
    journal.path.touch()
    _fsync_dir(root)
    status = store.load()

    for seq, action in enumerate(plan.actions, start=1):
        started = time.monotonic()
        try:
            manager = managers[action.unit.kind]
            if action.verb == "install":
                undo_hash = file_sha256(action.package_path)
                if undo_hash != action.descriptor.package_sha256:
                    raise ValueError(f"package for {action.unit} does not match its descriptor hash")
            else:
                rec = status.get(action.unit)
                if rec is None:
                    raise NotInstalledError(f"{action.unit} is not installed")
                undo_hash = rec.package_sha256
                _preserve_package(manager, action.unit, root, cache_dir, undo_hash)
            journal.append(JournalRecord(seq, action.verb, action.unit, undo_hash, "pending"))
            if action.verb == "install":
                manager.install(action.unit, action.package_path, root)
                record = InstallRecord.from_descriptor(action.descriptor, clock() if clock else None)
                status = store.apply(Install(record))
            else:
                manager.remove(action.unit, root)
                status = store.apply(Remove(action.unit))
            journal.set_state(seq, "done")
        except Exception as exc:
            log.error("%s failed: %s; rolling back", action, exc)
            try:
                rollback(journal, managers, store, root, cache_dir)
            except RollbackFailed as rb:
                raise RollbackFailed(f"{action} failed ({exc}) and {rb}") from exc
            raise ExecutionFailed(action, exc, rolled_back=True) from exc
        report.actions.append((action, time.monotonic() - started))

    _clear_journal(root)
    return report


def _preserve_package(manager: LayerManager, unit: UnitId, root: Path, cache_dir, digest: str) -> None:
    """Make sure the package of a unit about to be removed can be reinstalled on rollback."""
    if cached_package(cache_dir, digest) is not None:
        return
    installed = manager.installed_package(unit, root)
    if installed is None or file_sha256(installed) != digest:
        raise FileNotFoundError(f"no verified copy of {unit}'s package to keep for rollback")
    store_package(cache_dir, installed.read_bytes())


def _clear_journal(root: Path) -> None:
    for name in (JOURNAL_NAME, JOURNAL_STATUS_NAME):
        try:
            os.unlink(root / name)
        except FileNotFoundError:
            pass
    _fsync_dir(root)


def _restore_record(root: Path, unit: UnitId) -> InstallRecord:
    saved = (root / JOURNAL_STATUS_NAME).read_bytes()
    if saved == _ABSENT:
        raise RollbackFailed(f"no saved record for {unit}")
    rec = parse_status(saved).get(unit)
    if rec is None:
        raise RollbackFailed(f"no saved record for {unit}")
    return rec


def rollback(
    journal: Journal,
    managers: Mapping[str, LayerManager],
    store: StateStore,
    platform_root: str | os.PathLike,
    cache_dir: str | os.PathLike,
) -> None:
    """Undo every pending or done journal record, newest first, then drop the journal."""
    root = Path(platform_root)
    for rec in journal.open_records():
        try:
            manager = managers[rec.unit.kind]
            status = store.load()
            if rec.verb == "install":
                manager.remove(rec.unit, root)
                if status.get(rec.unit) is not None:
                    store.save(_without(status, rec.unit))
            else:
                if manager.installed_package(rec.unit, root) is None:
                    manager.remove(rec.unit, root)  # clears any partial leftovers
                    pkg = cached_package(cache_dir, rec.undo_hash)
                    if pkg is None:
                        raise FileNotFoundError(f"package {rec.undo_hash} no longer cached")
                    manager.install(rec.unit, pkg, root)
                if status.get(rec.unit) is None:
                    restored = _restore_record(root, rec.unit)
                    store.save(PlatformStatus(status.records + (restored,), status.format_version))
            journal.set_state(rec.seq, "undone")
        except Exception as exc:
            atomic_write(root / DIRTY_NAME, f"rollback of {rec.verb} {rec.unit} failed: {exc}\n".encode())
            raise RollbackFailed(f"undo of {rec.verb} {rec.unit} failed: {exc}") from exc
    saved = root / JOURNAL_STATUS_NAME
    if saved.exists() and saved.read_bytes() == _ABSENT and store.path.exists():
        if len(store.load()) == 0:
            os.unlink(store.path)
    _clear_journal(root)


def _without(status: PlatformStatus, unit: UnitId) -> PlatformStatus:
    return PlatformStatus(tuple(r for r in status.records if r.id != unit), status.format_version)


def recover(
    platform_root: str | os.PathLike,
    cache_dir: str | os.PathLike,
    managers: Mapping[str, LayerManager] | None = None,
    store: StateStore | None = None,
) -> bool:
    """Roll back an interrupted execution from its persisted journal. Returns True if there was one."""
    root = Path(platform_root)
    if not (root / JOURNAL_NAME).exists():
        return False
    managers = managers or default_managers()
    store = store or StateStore(root / STATUS_NAME)
    with platform_lock(root):
        rollback(Journal.open(root / JOURNAL_NAME), managers, store, root, cache_dir)
    return True


def removal_plan(unit: UnitId, status: PlatformStatus) -> ActionPlan:
    if status.get(unit) is None:
        raise NotInstalledError(f"{unit} is not installed")
    return ActionPlan((Action("remove", unit),))


def blocking_dependents(unit: UnitId, status: PlatformStatus) -> list[UnitId]:
    return dependents_of(status, unit)


def tree_snapshot(root: str | os.PathLike, exclude: Iterable[str] = ()) -> dict[str, bytes | None]:
    """Every path below ``root`` mapped to its bytes (None for directories)."""
    root = Path(root)
    skip = set(exclude)
    out: dict[str, bytes | None] = {}
    if not root.exists():
        return out
    for dirpath, dirnames, filenames in os.walk(root):
        rel = os.path.relpath(dirpath, root)
        for d in dirnames:
            p = os.path.normpath(os.path.join(rel, d))
            if p not in skip:
                out[p + "/"] = None
        for f in filenames:
            p = os.path.normpath(os.path.join(rel, f))
            if p not in skip:
                out[p] = Path(dirpath, f).read_bytes()
    return out
