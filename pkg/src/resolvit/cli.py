"""Command line front end.

Exit codes: 0 success or nothing to do, 2 usage error, 3 no solution,
4 conflict, 5 execution failure, 6 repository or integrity failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence

from .engine import Engine, EngineConfig, detect_profile, parse_kinds
from .errors import (
    ConflictError,
    CorruptStateError,
    DependentsExist,
    ExecutionFailed,
    IntegrityError,
    InvalidValue,
    LockHeld,
    MalformedDocument,
    MalformedRange,
    MalformedVersion,
    NoProviderFound,
    NoSolutionError,
    NotFound,
    NotInstalledError,
    PlatformDirty,
    RepositoryUnavailable,
    ResolvitError,
    RollbackFailed,
    UnknownPolicy,
    UsageError,
)
from .model import PlatformProfile
from .resolver import CONFLICT_POLICIES, POLICIES
from .service import make_server, parse_listen

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NO_SOLUTION = 3
EXIT_CONFLICT = 4
EXIT_EXECUTION = 5
EXIT_REPOSITORY = 6

_EXIT_FOR: list[tuple[type[BaseException], int]] = [
    (UsageError, EXIT_USAGE),
    (UnknownPolicy, EXIT_USAGE),
    (NotInstalledError, EXIT_USAGE),
    (InvalidValue, EXIT_USAGE),
    (MalformedVersion, EXIT_USAGE),
    (MalformedRange, EXIT_USAGE),
    (NoProviderFound, EXIT_NO_SOLUTION),
    (NoSolutionError, EXIT_NO_SOLUTION),
    (DependentsExist, EXIT_NO_SOLUTION),
    (ConflictError, EXIT_CONFLICT),
    (ExecutionFailed, EXIT_EXECUTION),
    (RollbackFailed, EXIT_EXECUTION),
    (LockHeld, EXIT_EXECUTION),
    (PlatformDirty, EXIT_EXECUTION),
    (CorruptStateError, EXIT_EXECUTION),
    (RepositoryUnavailable, EXIT_REPOSITORY),
    (IntegrityError, EXIT_REPOSITORY),
    (NotFound, EXIT_REPOSITORY),
    (MalformedDocument, EXIT_REPOSITORY),
]


def exit_code_for(exc: BaseException) -> int:
    for cls, code in _EXIT_FOR:
        if isinstance(exc, cls):
            return code
    return EXIT_EXECUTION


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--root", help="platform root (default: $RESOLVIT_ROOT or .)")
    common.add_argument("--repo", action="append", default=[], help="repository URL or directory; repeatable")
    common.add_argument("--cache", help="metadata and package cache (default: $RESOLVIT_CACHE)")
    common.add_argument("-v", "--verbose", action="store_true")

    resolving = argparse.ArgumentParser(add_help=False)
    resolving.add_argument("--policy", choices=sorted(POLICIES), default="minimal-units")
    resolving.add_argument("--conflict", choices=CONFLICT_POLICIES, default="abort")
    resolving.add_argument("--format", choices=("human", "plan"), default="human")
    resolving.add_argument("--arch", help="platform architecture (default: this machine)")
    resolving.add_argument("--os", dest="os_name", help="platform operating system (default: this machine)")
    resolving.add_argument("--disk-kib", type=int, help="available disk in KiB (default: free space of the root)")
    resolving.add_argument("--multi-version", default="bundle", help="kinds allowing coexisting versions")

    parser = argparse.ArgumentParser(prog="resolvit", description="Service-level deployment engine.")
    sub = parser.add_subparsers(dest="command", required=True)
    target_help = "svc:<service>[@<range>] or unit:<name>@<version>:<kind>"
    p = sub.add_parser("install", parents=[common, resolving], help="check, then deploy atomically")
    p.add_argument("target", help=target_help)
    p.add_argument("--dry-run", action="store_true", help="print the plan, change nothing")
    p = sub.add_parser("check", parents=[common, resolving], help="compute the plan only")
    p.add_argument("target", help=target_help)
    p = sub.add_parser("remove", parents=[common], help="remove an installed unit")
    p.add_argument("unit", help="<name>@<version>:<kind> or an unambiguous installed name")
    sub.add_parser("list", parents=[common], help="list installed units")
    sub.add_parser("refresh", parents=[common], help="refresh repository indexes")
    sub.add_parser("recover", parents=[common], help="roll back an interrupted deployment")
    p = sub.add_parser("serve", parents=[common], help="run the remote resolve service")
    p.add_argument("--listen", default="127.0.0.1:8470", help="host:port")
    return parser


def _profile(args, engine: Engine) -> PlatformProfile:
    detected = detect_profile(engine.root, parse_kinds(args.multi_version))
    return PlatformProfile(
        args.arch or detected.architecture,
        args.os_name or detected.os,
        args.disk_kib if args.disk_kib is not None else detected.disk_available_kib,
        detected.multi_version_kinds,
    )


def _print_plan(result, fmt: str, out) -> None:
    if fmt == "plan":
        out.write(result.plan.encode().decode("utf-8"))
        return
    if not result.plan.actions:
        out.write(f"Nothing to do: {result.target} is already satisfied.\n")
        return
    sol = result.solution
    out.write(
        f"Plan for {result.target}: {len(result.plan)} action(s), "
        f"{sol.total_disk_kib} KiB, cost {sol.total_cost}\n"
    )
    for a in result.plan:
        out.write(f"  {a.verb:<7} {a.unit.name} {a.unit.version} ({a.unit.kind})\n")
    out.write(f"plan-sha256 {result.plan.plan_hash}\n")


def _report_error(exc: ResolvitError, err) -> None:
    if isinstance(exc, (NoProviderFound, NoSolutionError)):
        err.write(f"error: {exc}\n")
        for line in exc.diagnostics:
            err.write(f"  {line}\n")
    elif isinstance(exc, ConflictError):
        err.write("error: conflicting units\n")
        for c in exc.conflicts:
            err.write(f"  {c}\n")
    elif isinstance(exc, DependentsExist):
        err.write(f"error: {exc.unit} is still needed by:\n")
        for d in exc.dependents:
            err.write(f"  {d}\n")
    else:
        err.write(f"error: {exc}\n")


def main(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        kw = {}
        if hasattr(args, "policy"):
            kw = {"default_policy": args.policy, "default_conflict_policy": args.conflict}
        config = EngineConfig.from_env(args.root, args.repo, args.cache, **kw)
        engine = Engine(config)
        return _dispatch(args, engine, out, err)
    except ResolvitError as exc:
        _report_error(exc, err)
        return exit_code_for(exc)


def _dispatch(args, engine: Engine, out, err) -> int:
    cmd = args.command
    if cmd in ("check", "install"):
        profile = _profile(args, engine)
        dry = cmd == "check" or args.dry_run
        result, report = engine.install(args.target, profile, args.policy, args.conflict, dry_run=dry)
        for w in result.warnings:
            err.write(f"warning: {w}\n")
        _print_plan(result, args.format, out)
        if report is not None and args.format == "human" and report.actions:
            err.write(f"applied {len(report)} action(s)\n")
        return EXIT_OK
    if cmd == "remove":
        engine.remove(args.unit)
        return EXIT_OK
    if cmd == "list":
        for rec in engine.list().records:
            out.write(f"{rec.id.name}\t{rec.id.version}\t{rec.id.kind}\n")
        return EXIT_OK
    if cmd == "refresh":
        if not engine.config.repositories:
            raise UsageError("no repository configured (use --repo or RESOLVIT_REPOS)")
        failures = 0
        for src, res in engine.refresh():
            if isinstance(res, Exception):
                failures += 1
                out.write(f"{src.base_url}: unavailable ({res})\n")
            else:
                stale = " (stale)" if res.stale else ""
                out.write(f"{src.base_url}: {len(res.entries)} entries{stale}\n")
        return EXIT_REPOSITORY if failures == len(engine.config.repositories) else EXIT_OK
    if cmd == "recover":
        if engine.recover():
            err.write("rolled back an interrupted deployment\n")
        return EXIT_OK
    if cmd == "serve":
        host, port = parse_listen(args.listen)
        server = make_server(engine, host, port)
        err.write(f"serving on http://{host}:{server.server_address[1]}\n")
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.server_close()
        return EXIT_OK
    raise UsageError(f"unknown command {cmd}")  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
