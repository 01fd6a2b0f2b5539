"""resolvit: service-level dependency resolution and atomic deployment."""

from .codec import (
    IndexEntry,
    parse_descriptor,
    parse_repository_index,
    serialize_descriptor,
    serialize_repository_index,
)
from .engine import Engine, EngineConfig, parse_target
from .executor import (
    Action,
    ActionPlan,
    Journal,
    LayerManager,
    SandboxLayerManager,
    execute_plan,
    order_actions,
    recover,
    rollback,
)
from .model import (
    Descriptor,
    DependencyEndpoint,
    DependencyGroup,
    PlatformProfile,
    ResourceRequirements,
    ServiceRef,
    UnitId,
)
from .repository import (
    FetchLog,
    IndexSnapshot,
    RepositorySource,
    fetch_descriptor,
    fetch_package,
    find_providers,
    refresh_index,
)
from .resolver import (
    CandidateSolution,
    Conflict,
    DependencyTree,
    ResolutionRequest,
    ServiceTarget,
    build_dependency_tree,
    check_context,
    enumerate_solutions,
    plan_conflict_resolution,
    register_policy,
    select_solution,
)
from .state import InstallRecord, PlatformStatus, apply_change, load_status, query_installed, save_status
from .versions import ANY, Version, VersionRange, compare_versions, parse_range, parse_version, range_contains

__version__ = "0.1.0"

__all__ = [
    "ANY",
    "Action",
    "ActionPlan",
    "CandidateSolution",
    "Conflict",
    "DependencyEndpoint",
    "DependencyGroup",
    "DependencyTree",
    "Descriptor",
    "Engine",
    "EngineConfig",
    "FetchLog",
    "IndexEntry",
    "IndexSnapshot",
    "InstallRecord",
    "Journal",
    "LayerManager",
    "PlatformProfile",
    "PlatformStatus",
    "RepositorySource",
    "ResolutionRequest",
    "ResourceRequirements",
    "SandboxLayerManager",
    "ServiceRef",
    "ServiceTarget",
    "UnitId",
    "Version",
    "VersionRange",
    "apply_change",
    "build_dependency_tree",
    "check_context",
    "compare_versions",
    "enumerate_solutions",
    "execute_plan",
    "fetch_descriptor",
    "fetch_package",
    "find_providers",
    "load_status",
    "order_actions",
    "parse_descriptor",
    "parse_range",
    "parse_repository_index",
    "parse_target",
    "parse_version",
    "plan_conflict_resolution",
    "query_installed",
    "range_contains",
    "recover",
    "refresh_index",
    "register_policy",
    "rollback",
    "save_status",
    "select_solution",
    "serialize_descriptor",
    "serialize_repository_index",
]
