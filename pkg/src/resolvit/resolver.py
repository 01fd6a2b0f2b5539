"""Check phase: dependency tree construction, solution enumeration and selection.

A candidate solution is a set S of not-yet-installed units taken from the
tree. With I the installed units and D ⊆ I the installed units S displaces,
the platform after deployment is F = S ∪ (I − D). S is valid when

* the requested target is provided by F,
* every dependency group of every unit in S holds over F
  (AND: all endpoints met, OR: at least ``cardinality``, XOR: exactly one,
  NOT: none),
* S fits in the available disk and respects single-version kinds,
* D is acceptable under the conflict policy: empty for ``abort``; for
  ``replace``, removing D must not break a dependency group of an installed
  unit that stays.

An installed unit d is displaced when some member of S conflicts with it:
a NOT endpoint on either side matches the other, or both share a name and
a single-version kind.
"""

from __future__ import annotations

import enum
import logging
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field, replace

from .codec import IndexEntry
from .errors import ConflictError, InvalidValue, NoProviderFound, NoSolutionError, UnknownPolicy
from .model import DependencyEndpoint, DependencyGroup, Descriptor, PlatformProfile, UnitId, check_token
from .repository import IndexSnapshot, RepositorySource, locate_providers
from .state import PlatformStatus, query_installed
from .versions import ANY, VersionRange, format_range

log = logging.getLogger(__name__)

CONFLICT_POLICIES = ("abort", "replace")


# -- request -----------------------------------------------------------------


@dataclass(frozen=True)
class ServiceTarget:
    service: str
    range: VersionRange = ANY

    def __post_init__(self) -> None:
        check_token(self.service, "service name")

    def __str__(self) -> str:
        return f"svc:{self.service}@{format_range(self.range)}"


Target = ServiceTarget | UnitId


@dataclass(frozen=True)
class ResolutionRequest:
    target: Target
    profile: PlatformProfile
    status: PlatformStatus = field(default_factory=PlatformStatus)
    policy: str = "minimal-units"
    conflict_policy: str = "abort"

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise UnknownPolicy(f"unknown selection policy {self.policy!r}")
        if self.conflict_policy not in CONFLICT_POLICIES:
            raise InvalidValue(f"unknown conflict policy {self.conflict_policy!r}")


# -- tree --------------------------------------------------------------------


class Violation(str, enum.Enum):
    ARCHITECTURE = "ArchitectureMismatch"
    OS = "OsMismatch"


@dataclass
class TreeNode:
    id: UnitId
    descriptor: Descriptor
    origin: str  # "repository" | "installed"
    entry: IndexEntry | None = None
    source: RepositorySource | None = None
    violations: tuple[Violation, ...] = ()
    expanded: bool = False
    satisfied: bool = False

    @property
    def cost(self) -> int:
        return self.entry.cost if self.entry is not None else 0


@dataclass(frozen=True)
class Edge:
    source: UnitId
    group: int
    endpoint: int
    candidates: tuple[UnitId, ...]


@dataclass
class DependencyTree:
    target: Target
    nodes: dict[UnitId, TreeNode] = field(default_factory=dict)
    roots: tuple[UnitId, ...] = ()
    edges: list[Edge] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    @property
    def satisfied(self) -> bool:
        """True when the target is already installed and nothing needs doing."""
        return len(self.roots) == 1 and self.nodes[self.roots[0]].satisfied

    def selectable(self) -> list[TreeNode]:
        nodes = [
            n for n in self.nodes.values() if n.origin == "repository" and n.expanded and not n.violations
        ]
        return sorted(nodes, key=lambda n: n.id.sort_key())

    def depth(self) -> int:
        children: dict[UnitId, set[UnitId]] = {}
        for e in self.edges:
            children.setdefault(e.source, set()).update(e.candidates)

        def walk(u: UnitId, seen: frozenset) -> int:
            kids = [c for c in children.get(u, ()) if c not in seen]
            return 1 + max((walk(c, seen | {c}) for c in kids), default=0)

        return max((walk(r, frozenset({r})) for r in self.roots), default=0)


def check_context(d: Descriptor, p: PlatformProfile) -> list[Violation]:
    out = []
    req = d.requirements
    if req.architecture is not None and req.architecture != p.architecture:
        out.append(Violation.ARCHITECTURE)
    if req.os is not None and req.os != p.os:
        out.append(Violation.OS)
    return out


DescriptorFetcher = Callable[[IndexEntry, RepositorySource], Descriptor]


def build_dependency_tree(
    request: ResolutionRequest,
    snapshots: Sequence[IndexSnapshot],
    fetch_descriptor: DescriptorFetcher,
    snapshots_for: Callable[[str | None], Sequence[IndexSnapshot]] | None = None,
) -> DependencyTree:
    """Expand the target recursively into every unit that could take part in a deployment.

    Endpoints already met by an installed unit are not searched further.
    NOT endpoints are recorded but never expanded.
    """
    if not snapshots:
        raise InvalidValue("at least one repository snapshot is required")
    status, profile = request.status, request.profile
    if snapshots_for is None:
        snapshots_for = lambda hint: snapshots  # noqa: E731
    tree = DependencyTree(request.target)
    installed_ids = status.installed

    def installed_node(rec) -> UnitId:
        if rec.id not in tree.nodes:
            tree.nodes[rec.id] = TreeNode(rec.id, rec.descriptor, "installed", satisfied=True)
        return rec.id

    # step 2 for the root: already installed and current?
    target = request.target
    if isinstance(target, ServiceTarget):
        hits = query_installed(status, target.service, target.range)
        if hits:
            tree.roots = (installed_node(hits[0]),)
            return tree
        candidates = [
            (e, s) for e, s in locate_providers(target.service, target.range, snapshots) if e.id not in installed_ids
        ]
    else:
        rec = status.get(target)
        if rec is not None:
            tree.roots = (installed_node(rec),)
            return tree
        candidates = []
        for snap in snapshots:
            match = next((e for e in snap.entries if e.id == target), None)
            if match is not None:
                candidates.append((match, snap.source))
                break
    if not candidates:
        raise NoProviderFound(f"no repository provides {target}")
    tree.roots = tuple(e.id for e, _ in candidates)

    def node_for(entry: IndexEntry, source: RepositorySource) -> TreeNode:
        node = tree.nodes.get(entry.id)
        if node is None:
            descriptor = fetch_descriptor(entry, source)  # step 1
            node = TreeNode(entry.id, descriptor, "repository", entry, source)
            node.violations = tuple(check_context(descriptor, profile))
            tree.nodes[entry.id] = node
        return node

    queue: list[tuple[IndexEntry, RepositorySource]] = list(candidates)
    while queue:
        entry, source = queue.pop(0)
        node = node_for(entry, source)
        if node.expanded or node.violations:
            continue
        node.expanded = True
        for gi, group in enumerate(node.descriptor.groups):  # step 3
            for ei, ep in enumerate(group.endpoints):
                installed = [installed_node(r) for r in query_installed(status, ep.service, ep.range)]
                if installed and group.op != "NOT":
                    tree.edges.append(Edge(node.id, gi, ei, tuple(installed)))
                    continue
                found = [
                    (e, s)
                    for e, s in locate_providers(ep.service, ep.range, snapshots_for(ep.repository))
                    if e.id not in installed_ids
                ]
                if group.op == "NOT":
                    # conflicts are recorded, never expanded
                    ids = tuple(installed) + tuple(e.id for e, _ in found)
                    tree.edges.append(Edge(node.id, gi, ei, ids))
                    continue
                tree.edges.append(Edge(node.id, gi, ei, tuple(e.id for e, _ in found)))
                if not found:
                    tree.missing.append(f"{node.id}: {group.op} endpoint {ep} has no provider")
                for e, s in found:
                    node_for(e, s)
                    queue.append((e, s))

    _check_mandatory(tree)
    return tree


def _check_mandatory(tree: DependencyTree) -> None:
    """Fail early when a unit that every solution needs has an AND endpoint nobody provides."""
    if len(tree.roots) != 1:
        return
    by_source: dict[tuple[UnitId, int, int], Edge] = {(e.source, e.group, e.endpoint): e for e in tree.edges}
    stack, seen = [tree.roots[0]], set()
    while stack:
        uid = stack.pop()
        if uid in seen:
            continue
        seen.add(uid)
        node = tree.nodes[uid]
        if not node.expanded:
            continue
        for gi, group in enumerate(node.descriptor.groups):
            if group.op != "AND":
                continue
            for ei, ep in enumerate(group.endpoints):
                edge = by_source.get((uid, gi, ei))
                if edge is None or not edge.candidates:
                    msg = f"{uid}: AND endpoint {ep} has no provider"
                    raise NoProviderFound(msg, [msg])
                if len(edge.candidates) == 1 and tree.nodes[edge.candidates[0]].origin == "repository":
                    stack.append(edge.candidates[0])


# -- enumeration -------------------------------------------------------------


@dataclass(frozen=True)
class CandidateSolution:
    selected: frozenset[UnitId]
    displaced: frozenset[UnitId] = frozenset()
    total_disk_kib: int = 0
    total_cost: int = 0

    def encoding(self) -> str:
        return encode_units(self.selected)


def encode_units(units: Iterable[UnitId]) -> str:
    return "".join(f"{u.name}\t{u.version}\t{u.kind}\n" for u in sorted(units, key=lambda u: u.sort_key()))


def conflicts_between(a: Descriptor, b: Descriptor, multi_version_kinds: frozenset[str]) -> list[DependencyEndpoint | None]:
    """Reasons ``a`` and ``b`` cannot coexist: matching NOT endpoints, or ``None`` for a version clash."""
    reasons: list[DependencyEndpoint | None] = []
    for x, y in ((a, b), (b, a)):
        for g in x.groups:
            if g.op == "NOT":
                reasons.extend(ep for ep in g.endpoints if ep.satisfied_by(y.provides))
    if a.id.name == b.id.name and a.id.kind == b.id.kind and a.id.kind not in multi_version_kinds and a.id != b.id:
        reasons.append(None)
    return reasons


def group_holds(group: DependencyGroup, met: Sequence[bool]) -> bool:
    n = sum(met)
    if group.op == "AND":
        return n == len(met)
    if group.op == "OR":
        return n >= group.cardinality
    if group.op == "XOR":
        return n == 1
    return n == 0


def _target_met(target: Target, descriptors: Iterable[Descriptor]) -> bool:
    if isinstance(target, ServiceTarget):
        return any(d.provides_service(target.service, target.range) for d in descriptors)
    return any(d.id == target for d in descriptors)


def _breaks_dependents(
    status: PlatformStatus, displaced: frozenset[UnitId], final: Sequence[Descriptor]
) -> list[UnitId]:
    """Installed units (not displaced) whose dependency groups held before and fail after removal."""
    if not displaced:
        return []
    before = [r.descriptor for r in status.records]
    broken = []
    for rec in status.records:
        if rec.id in displaced:
            continue
        for g in rec.descriptor.groups:
            if g.op == "NOT":
                continue
            was = group_holds(g, [ep.satisfied_by([s for d in before for s in d.provides]) for ep in g.endpoints])
            now = group_holds(g, [ep.satisfied_by([s for d in final for s in d.provides]) for ep in g.endpoints])
            if was and not now:
                broken.append(rec.id)
                break
    return broken


def enumerate_solutions(
    tree: DependencyTree,
    status: PlatformStatus,
    profile: PlatformProfile,
    conflict_policy: str = "abort",
) -> list[CandidateSolution]:
    """Every valid selection drawn from the tree, ordered by canonical encoding.

    ``conflict_policy="relaxed"`` drops the displacement admissibility check;
    it is used to tell conflict failures apart from plain unsatisfiability.
    """
    if conflict_policy not in ("abort", "replace", "relaxed"):
        raise InvalidValue(f"unknown conflict policy {conflict_policy!r}")
    if tree.satisfied:
        return [CandidateSolution(frozenset())]

    mvk = profile.multi_version_kinds
    records = list(status.records)
    nodes = tree.selectable()

    # conflicts with installed units; under abort a conflicting unit can never be chosen
    conflicters: list[list[int]] = [[] for _ in records]
    usable = []
    for node in nodes:
        hits = [k for k, rec in enumerate(records) if conflicts_between(node.descriptor, rec.descriptor, mvk)]
        if hits and conflict_policy == "abort":
            continue
        usable.append((node, hits))
    nodes = [n for n, _ in usable]
    for i, (_, hits) in enumerate(usable):
        for k in hits:
            conflicters[k].append(i)
    n = len(nodes)
    index = {node.id: i for i, node in enumerate(nodes)}

    def providers(service: str, r: VersionRange) -> tuple[list[int], list[int]]:
        new = [i for i, nd in enumerate(nodes) if nd.descriptor.provides_service(service, r)]
        old = [k for k, rec in enumerate(records) if rec.descriptor.provides_service(service, r)]
        return new, old

    # each constraint: (scope, predicate over the selected index set)
    constraints: list[tuple[frozenset[int], Callable[[set[int]], bool]]] = []

    def present(old: list[int], sel: set[int]) -> list[bool]:
        return [not any(c in sel for c in conflicters[k]) for k in old]

    if isinstance(tree.target, ServiceTarget):
        t_new, t_old = providers(tree.target.service, tree.target.range)
        scope = frozenset(t_new).union(*(conflicters[k] for k in t_old))
        constraints.append(
            (scope, lambda sel, t_new=t_new, t_old=t_old: any(i in sel for i in t_new) or any(present(t_old, sel)))
        )
    else:
        ti = index.get(tree.target)
        constraints.append((frozenset() if ti is None else frozenset({ti}), lambda sel, ti=ti: ti is not None and ti in sel))

    for u, node in enumerate(nodes):
        for group in node.descriptor.groups:
            eps = [providers(ep.service, ep.range) for ep in group.endpoints]
            scope = {u}
            for new, old in eps:
                scope.update(new)
                for k in old:
                    scope.update(conflicters[k])

            def check(sel: set[int], u=u, group=group, eps=eps) -> bool:
                if u not in sel:
                    return True
                met = [any(i in sel for i in new) or any(present(old, sel)) for new, old in eps]
                return group_holds(group, met)

            constraints.append((frozenset(scope), check))

    for i in range(n):
        for j in range(i + 1, n):
            if conflicts_between(nodes[i].descriptor, nodes[j].descriptor, mvk):
                constraints.append((frozenset({i, j}), lambda sel, i=i, j=j: not (i in sel and j in sel)))

    by_trigger: dict[int, list[Callable[[set[int]], bool]]] = {}
    for scope, pred in constraints:
        by_trigger.setdefault(max(scope, default=-1), []).append(pred)
    if not all(pred(set()) for pred in by_trigger.get(-1, ())):
        return []

    disk = [nd.descriptor.requirements.disk_space_kib for nd in nodes]
    budget = profile.disk_available_kib
    results: list[CandidateSolution] = []
    sel: set[int] = set()

    def leaf() -> None:
        displaced = frozenset(records[k].id for k in range(len(records)) if any(c in sel for c in conflicters[k]))
        if conflict_policy == "replace" and displaced:
            final = [nodes[i].descriptor for i in sel] + [r.descriptor for r in records if r.id not in displaced]
            if _breaks_dependents(status, displaced, final):
                return
        results.append(
            CandidateSolution(
                frozenset(nodes[i].id for i in sel),
                displaced,
                sum(disk[i] for i in sel),
                sum(nodes[i].cost for i in sel),
            )
        )

    def search(k: int, used: int) -> None:
        if k == n:
            leaf()
            return
        for take in (False, True):
            if take:
                if used + disk[k] > budget:
                    continue
                sel.add(k)
            if all(pred(sel) for pred in by_trigger.get(k, ())):
                search(k + 1, used + (disk[k] if take else 0))
            if take:
                sel.discard(k)

    search(0, 0)
    results.sort(key=CandidateSolution.encoding)
    return results


# -- selection ---------------------------------------------------------------


class _Desc:
    """Wraps a value so that larger values sort first."""

    __slots__ = ("value",)

    def __init__(self, value):
        self.value = value

    def __lt__(self, other: _Desc) -> bool:
        return other.value < self.value

    def __eq__(self, other: object) -> bool:
        return isinstance(other, _Desc) and self.value == other.value


def version_vector(solution: CandidateSolution) -> tuple:
    units = sorted(solution.selected, key=lambda u: u.sort_key())
    return tuple(u.version.sort_key() for u in units)


def priority_sum(solution: CandidateSolution, tree: DependencyTree) -> int:
    return sum(tree.nodes[u].descriptor.priority for u in solution.selected if u in tree.nodes)


def _minimal_units(s: CandidateSolution, tree: DependencyTree) -> tuple:
    return (len(s.selected), s.total_disk_kib, _Desc(version_vector(s)), -priority_sum(s, tree), s.encoding())


def _newest_versions(s: CandidateSolution, tree: DependencyTree) -> tuple:
    return (_Desc(version_vector(s)), len(s.selected), s.encoding())


def _min_cost(s: CandidateSolution, tree: DependencyTree) -> tuple:
    return (s.total_cost,) + _minimal_units(s, tree)


PolicyKey = Callable[[CandidateSolution, DependencyTree], tuple]

POLICIES: dict[str, PolicyKey] = {
    "minimal-units": _minimal_units,
    "newest-versions": _newest_versions,
    "min-cost": _min_cost,
}


def register_policy(name: str, key: PolicyKey) -> None:
    """Add a selection policy. The key must end in a unique component so that ties are impossible."""
    check_token(name, "policy name")
    if name in POLICIES:
        raise InvalidValue(f"policy {name!r} is already registered")
    POLICIES[name] = key


def select_solution(
    solutions: Sequence[CandidateSolution], policy: str, tree: DependencyTree
) -> CandidateSolution:
    try:
        key = POLICIES[policy]
    except KeyError:
        raise UnknownPolicy(f"unknown selection policy {policy!r}") from None
    if not solutions:
        raise NoSolutionError("no candidate solution to select from")
    return min(solutions, key=lambda s: key(s, tree))


# -- conflicts ---------------------------------------------------------------


@dataclass(frozen=True)
class Conflict:
    """A selected unit that cannot coexist with an installed one.

    ``endpoint`` is the matching NOT endpoint, or None when two versions of a
    single-version unit would coexist.
    """

    source: UnitId
    endpoint: DependencyEndpoint | None
    offending: UnitId
    resolution: str  # "abort" | "remove"

    def __str__(self) -> str:
        why = f"NOT {self.endpoint}" if self.endpoint is not None else "single-version kind"
        return f"{self.source} vs {self.offending} ({why}): {self.resolution}"


def plan_conflict_resolution(
    solution: CandidateSolution,
    status: PlatformStatus,
    conflict_policy: str,
    tree: DependencyTree,
    multi_version_kinds: frozenset[str] = frozenset({"bundle"}),
) -> list[Conflict]:
    if conflict_policy not in CONFLICT_POLICIES:
        raise InvalidValue(f"unknown conflict policy {conflict_policy!r}")
    pairs: list[tuple[UnitId, DependencyEndpoint | None, UnitId]] = []
    for uid in sorted(solution.selected, key=lambda u: u.sort_key()):
        d = tree.nodes[uid].descriptor
        for rec in status.records:
            for reason in conflicts_between(d, rec.descriptor, multi_version_kinds):
                pairs.append((uid, reason, rec.id))
    if not pairs:
        return []
    if conflict_policy == "abort":
        raise ConflictError([Conflict(s, ep, o, "abort") for s, ep, o in pairs])
    displaced = frozenset(o for _, _, o in pairs)
    final = [tree.nodes[u].descriptor for u in solution.selected]
    final += [r.descriptor for r in status.records if r.id not in displaced]
    if _breaks_dependents(status, displaced, final):
        raise ConflictError([Conflict(s, ep, o, "abort") for s, ep, o in pairs])
    return [Conflict(s, ep, o, "remove") for s, ep, o in pairs]


def dependents_of(status: PlatformStatus, unit: UnitId) -> list[UnitId]:
    """Installed units whose AND/OR/XOR groups would stop holding if ``unit`` were removed."""
    rest = [r.descriptor for r in status.records if r.id != unit]
    return _breaks_dependents(status, frozenset({unit}), rest)


# -- diagnostics -------------------------------------------------------------


def explain_failure(tree: DependencyTree, status: PlatformStatus, profile: PlatformProfile) -> list[str]:
    lines = list(tree.missing)
    edges = {(e.source, e.group, e.endpoint): e for e in tree.edges}
    for node in sorted(tree.nodes.values(), key=lambda nd: nd.id.sort_key()):
        if node.origin != "repository":
            continue
        req = node.descriptor.requirements
        if Violation.ARCHITECTURE in node.violations:
            lines.append(f"{node.id}: requires architecture {req.architecture}, platform is {profile.architecture}")
        if Violation.OS in node.violations:
            lines.append(f"{node.id}: requires os {req.os}, platform is {profile.os}")
        if not node.expanded:
            continue
        for gi, g in enumerate(node.descriptor.groups):
            counts = [len(edges[(node.id, gi, ei)].candidates) if (node.id, gi, ei) in edges else 0 for ei in range(len(g.endpoints))]
            reachable = sum(1 for c in counts if c)
            if g.op == "OR" and reachable < g.cardinality:
                lines.append(f"{node.id}: OR group {gi} needs {g.cardinality} endpoint(s), only {reachable} have providers")
            if g.op == "XOR" and reachable == 0:
                lines.append(f"{node.id}: XOR group {gi} has no endpoint with a provider")
    if not tree.satisfied and enumerate_solutions(tree, status, replace(profile, disk_available_kib=10**18), "relaxed"):
        lines.append(f"every solution exceeds the available disk ({profile.disk_available_kib} KiB)")
    if not lines:
        lines.append(f"no combination of candidate units satisfies every dependency group of {tree.target}")
    return lines


def resolve(
    request: ResolutionRequest,
    snapshots: Sequence[IndexSnapshot],
    fetch_descriptor: DescriptorFetcher,
    snapshots_for: Callable[[str | None], Sequence[IndexSnapshot]] | None = None,
) -> tuple[DependencyTree, CandidateSolution, list[Conflict]]:
    """Run the whole check phase and return the chosen solution with its conflict plan."""
    tree = build_dependency_tree(request, snapshots, fetch_descriptor, snapshots_for)
    profile, status = request.profile, request.status
    solutions = enumerate_solutions(tree, status, profile, request.conflict_policy)
    if not solutions:
        relaxed = enumerate_solutions(tree, status, profile, "relaxed")
        if relaxed:
            chosen = select_solution(relaxed, request.policy, tree)
            # raises: every relaxed solution carries a conflict the policy rejects
            plan_conflict_resolution(chosen, status, request.conflict_policy, tree, profile.multi_version_kinds)
        diagnostics = explain_failure(tree, status, profile)
        raise NoSolutionError(f"no valid solution for {request.target}", diagnostics)
    chosen = select_solution(solutions, request.policy, tree)
    conflicts = plan_conflict_resolution(chosen, status, request.conflict_policy, tree, profile.multi_version_kinds)
    return tree, chosen, conflicts
