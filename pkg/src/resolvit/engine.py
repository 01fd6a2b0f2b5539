"""Wires repositories, resolver, executor and state store into check/install/remove."""

from __future__ import annotations

import os
import platform
import shutil
import sys
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import (
    DependentsExist,
    InvalidValue,
    MalformedRange,
    MalformedVersion,
    NotInstalledError,
    ResolvitError,
    UsageError,
)
from .executor import (
    JOURNAL_NAME,
    STATUS_NAME,
    Action,
    ActionPlan,
    ExecutionReport,
    LayerManager,
    default_managers,
    Journal,
    execute_plan,
    order_actions,
    platform_lock,
    recover,
    rollback,
)
from .model import KINDS, PlatformProfile, UnitId
from .repository import (
    FetchLog,
    RepositorySet,
    RepositorySource,
    fetch_package,
    refresh_index,
    resolve_cache_dir,
)
from .resolver import (
    CONFLICT_POLICIES,
    POLICIES,
    CandidateSolution,
    Conflict,
    DependencyTree,
    ResolutionRequest,
    ServiceTarget,
    Target,
    dependents_of,
    resolve,
)
from .state import PlatformStatus, StateStore
from .versions import ANY, parse_range, parse_version

ROOT_ENV = "RESOLVIT_ROOT"
REPOS_ENV = "RESOLVIT_REPOS"


def parse_target(text: str) -> Target:
    """``svc:<service>[@<range>]`` or ``unit:<name>@<version>:<kind>``."""
    try:
        if text.startswith("svc:"):
            body = text[4:]
            service, sep, rng = body.partition("@")
            return ServiceTarget(service, parse_range(rng) if sep else ANY)
        if text.startswith("unit:"):
            return parse_unit_spec(text[5:])
    except (InvalidValue, MalformedRange, MalformedVersion) as exc:
        raise UsageError(f"bad target {text!r}: {exc}") from None
    raise UsageError(f"target must start with 'svc:' or 'unit:': {text!r}")


def parse_unit_spec(text: str) -> UnitId:
    """``<name>@<version>:<kind>``; the kind defaults to bundle."""
    if text.startswith("unit:"):
        text = text[5:]
    name, sep, rest = text.partition("@")
    if not sep:
        raise UsageError(f"unit must be <name>@<version>[:<kind>]: {text!r}")
    version, _, kind = rest.partition(":")
    try:
        return UnitId(name, parse_version(version), kind or "bundle")
    except (InvalidValue, MalformedVersion) as exc:
        raise UsageError(f"bad unit {text!r}: {exc}") from None


def parse_repo(text: str) -> RepositorySource:
    try:
        if "://" in text:
            return RepositorySource(text)
        return RepositorySource.from_path(text)
    except InvalidValue as exc:
        raise UsageError(str(exc)) from None


def detect_profile(root: Path, multi_version_kinds: frozenset[str] = frozenset({"bundle"})) -> PlatformProfile:
    probe = Path(root)
    while not probe.exists():
        probe = probe.parent
    arch = platform.machine() or "unknown"
    os_name = sys.platform.rstrip("0123456789") or "unknown"
    free = shutil.disk_usage(probe).free // 1024
    return PlatformProfile(arch, os_name, free, multi_version_kinds)


@dataclass
class EngineConfig:
    repositories: list[RepositorySource]
    platform_root: Path
    cache_dir: Path
    default_policy: str = "minimal-units"
    default_conflict_policy: str = "abort"

    def __post_init__(self) -> None:
        self.platform_root = Path(self.platform_root)
        self.cache_dir = Path(self.cache_dir)
        if self.default_policy not in POLICIES:
            raise UsageError(f"unknown policy {self.default_policy!r}")
        if self.default_conflict_policy not in CONFLICT_POLICIES:
            raise UsageError(f"unknown conflict policy {self.default_conflict_policy!r}")

    @classmethod
    def from_env(
        cls,
        root: str | None = None,
        repos: Sequence[str] = (),
        cache_dir: str | None = None,
        env: Mapping[str, str] | None = None,
        **kw,
    ) -> EngineConfig:
        env = os.environ if env is None else env
        root = root or env.get(ROOT_ENV) or "."
        repo_texts = list(repos) or [r for r in env.get(REPOS_ENV, "").split(",") if r.strip()]
        return cls(
            repositories=[parse_repo(r.strip()) for r in repo_texts],
            platform_root=Path(root),
            cache_dir=resolve_cache_dir(cache_dir),
            **kw,
        )


@dataclass
class CheckResult:
    target: Target
    plan: ActionPlan
    solution: CandidateSolution
    tree: DependencyTree
    conflicts: list[Conflict]
    fetch_log: FetchLog
    warnings: list[str] = field(default_factory=list)


class Engine:
    def __init__(self, config: EngineConfig, managers: Mapping[str, LayerManager] | None = None):
        self.config = config
        self.managers = dict(managers) if managers is not None else default_managers()
        self.store = StateStore(config.platform_root / STATUS_NAME)

    @property
    def root(self) -> Path:
        return self.config.platform_root

    def profile(self, multi_version_kinds: frozenset[str] = frozenset({"bundle"})) -> PlatformProfile:
        return detect_profile(self.root, multi_version_kinds)

    def _repositories(self, fetch_log: FetchLog | None = None) -> RepositorySet:
        if not self.config.repositories:
            raise UsageError("no repository configured (use --repo or RESOLVIT_REPOS)")
        return RepositorySet(self.config.repositories, self.config.cache_dir, fetch_log)

    def check(
        self,
        target: Target | str,
        profile: PlatformProfile | None = None,
        policy: str | None = None,
        conflict_policy: str | None = None,
        status: PlatformStatus | None = None,
    ) -> CheckResult:
        """Run the check phase only. Nothing on the platform changes."""
        if isinstance(target, str):
            target = parse_target(target)
        if status is None:
            status = self.store.load()
        request = ResolutionRequest(
            target,
            profile or self.profile(),
            status,
            policy or self.config.default_policy,
            conflict_policy or self.config.default_conflict_policy,
        )
        repos = self._repositories()
        snapshots = repos.snapshots()
        tree, solution, conflicts = resolve(
            request, snapshots, lambda e, s: repos.descriptor(e, s), repos.snapshots_for
        )
        plan = order_actions(solution, tree, conflicts, status)
        return CheckResult(target, plan, solution, tree, conflicts, repos.log, list(repos.warnings))

    def install(
        self,
        target: Target | str,
        profile: PlatformProfile | None = None,
        policy: str | None = None,
        conflict_policy: str | None = None,
        dry_run: bool = False,
    ) -> tuple[CheckResult, ExecutionReport | None]:
        if dry_run:
            return self.check(target, profile, policy, conflict_policy), None
        with platform_lock(self.root):
            if recover_needed(self.root):
                recover_locked(self)
            result = self.check(target, profile, policy, conflict_policy)
            plan = self._attach_packages(result)
            report = execute_plan(plan, self.managers, self.store, self.root, self.config.cache_dir, locked=True)
        return result, report

    def _attach_packages(self, result: CheckResult) -> ActionPlan:
        actions = []
        for a in result.plan:
            if a.verb == "install":
                node = result.tree.nodes[a.unit]
                path = fetch_package(node.entry, node.source, self.config.cache_dir, result.fetch_log)
                a = replace(a, package_path=path)
            actions.append(a)
        return ActionPlan(tuple(actions))

    def remove(self, unit: UnitId | str) -> ExecutionReport:
        if isinstance(unit, str):
            unit = self.resolve_unit(unit)
        with platform_lock(self.root):
            if recover_needed(self.root):
                recover_locked(self)
            status = self.store.load()
            if status.get(unit) is None:
                raise NotInstalledError(f"{unit} is not installed")
            blockers = dependents_of(status, unit)
            if blockers:
                raise DependentsExist(unit, blockers)
            plan = ActionPlan((Action("remove", unit),))
            return execute_plan(plan, self.managers, self.store, self.root, self.config.cache_dir, locked=True)

    def resolve_unit(self, spec: str) -> UnitId:
        """Accept ``name@version:kind`` or a bare name that matches exactly one installed unit."""
        if "@" in spec:
            return parse_unit_spec(spec)
        matches = [r.id for r in self.store.load().records if r.id.name == spec]
        if len(matches) != 1:
            raise NotInstalledError(f"{spec!r} matches {len(matches)} installed units")
        return matches[0]

    def list(self) -> PlatformStatus:
        return self.store.load()

    def refresh(self) -> list[tuple[RepositorySource, object]]:
        """Refresh every configured index; each result is an IndexSnapshot or the error raised."""
        out = []
        for src in self.config.repositories:
            try:
                out.append((src, refresh_index(src, self.config.cache_dir)))
            except ResolvitError as exc:
                out.append((src, exc))
        return out

    def recover(self) -> bool:
        return recover(self.root, self.config.cache_dir, self.managers, self.store)


def recover_needed(root: Path) -> bool:
    return (Path(root) / JOURNAL_NAME).exists()


def recover_locked(engine: Engine) -> None:
    rollback(Journal.open(engine.root / JOURNAL_NAME), engine.managers, engine.store, engine.root, engine.config.cache_dir)


def parse_kinds(text: str) -> frozenset[str]:
    kinds = frozenset(k.strip() for k in text.split(",") if k.strip())
    if not kinds <= set(KINDS):
        raise UsageError(f"unknown kinds in {text!r}")
    return kinds
