"""Exception hierarchy shared by every resolvit module."""

from __future__ import annotations


class ResolvitError(Exception):
    """Base class for all engine errors."""


class MalformedVersion(ResolvitError, ValueError):
    pass


class MalformedRange(ResolvitError, ValueError):
    pass


class InvalidValue(ResolvitError, ValueError):
    """A field value is outside its domain (bad token, bad hash, ...)."""


class MalformedDocument(ResolvitError):
    """A document is not well-formed (XML syntax, stanza syntax, payload syntax)."""


class SchemaViolation(MalformedDocument):
    """Well-formed document that breaks a schema rule."""


class UnknownDependencyType(SchemaViolation):
    pass


class DuplicateUnit(MalformedDocument):
    pass


class RepositoryUnavailable(ResolvitError):
    pass


class NotFound(ResolvitError):
    pass


class IntegrityError(ResolvitError):
    pass


class NoProviderFound(ResolvitError):
    def __init__(self, message: str, diagnostics: list[str] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or [message]


class NoSolutionError(ResolvitError):
    def __init__(self, message: str = "no valid solution", diagnostics: list[str] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or [message]


class UnknownPolicy(ResolvitError):
    pass


class ConflictError(ResolvitError):
    def __init__(self, conflicts: list):
        self.conflicts = list(conflicts)
        pairs = ", ".join(f"{c.source} vs {c.offending}" for c in self.conflicts)
        super().__init__(f"unresolvable conflicts: {pairs}")


class DependentsExist(ResolvitError):
    def __init__(self, unit, dependents: list):
        self.unit = unit
        self.dependents = list(dependents)
        names = ", ".join(str(d) for d in self.dependents)
        super().__init__(f"{unit} is required by installed units: {names}")


class CorruptStateError(ResolvitError):
    def __init__(self, stanza: int, reason: str):
        self.stanza = stanza
        self.reason = reason
        super().__init__(f"stanza {stanza}: {reason}")


class DuplicateInstall(ResolvitError):
    pass


class NotInstalledError(ResolvitError):
    pass


class LockHeld(ResolvitError):
    pass


class ExecutionFailed(ResolvitError):
    def __init__(self, action, cause: BaseException, rolled_back: bool = True):
        self.action = action
        self.cause = cause
        self.rolled_back = rolled_back
        super().__init__(f"{action} failed: {cause} (rolled back: {rolled_back})")


class RollbackFailed(ResolvitError):
    pass


class PlatformDirty(ResolvitError):
    """A previous rollback failed; manual recovery is needed."""


class UsageError(ResolvitError):
    pass
