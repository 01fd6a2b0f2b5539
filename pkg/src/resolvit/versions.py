"""Three-component versions with an optional qualifier, and version ranges.

Textual forms::

    1.2.0            plain release
    1.2.0-beta       qualified; sorts below 1.2.0
    [1.0.0,2.0.0)    interval, brackets give inclusiveness
    [1.0.0,)         half-open interval (no upper bound)
    *                any version
    1.2.0            as a range: exactly that version
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import total_ordering

from .errors import MalformedRange, MalformedVersion

_VERSION_RE = re.compile(r"^([0-9]+)\.([0-9]+)\.([0-9]+)(?:-([A-Za-z0-9]+))?$")


class Ordering(enum.IntEnum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


@total_ordering
@dataclass(frozen=True)
class Version:
    major: int
    minor: int
    micro: int
    qualifier: str | None = None

    def __post_init__(self) -> None:
        for part in (self.major, self.minor, self.micro):
            if not isinstance(part, int) or isinstance(part, bool) or part < 0:
                raise MalformedVersion(f"version components must be non-negative integers: {part!r}")
        if self.qualifier is not None and not re.fullmatch(r"[A-Za-z0-9]+", self.qualifier):
            raise MalformedVersion(f"invalid qualifier {self.qualifier!r}")

    def sort_key(self) -> tuple:
        # a release outranks every qualified build of the same triple
        if self.qualifier is None:
            return (self.major, self.minor, self.micro, 1, b"")
        return (self.major, self.minor, self.micro, 0, self.qualifier.encode("ascii"))

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, Version):
            return NotImplemented
        return self.sort_key() < other.sort_key()

    def __str__(self) -> str:
        base = f"{self.major}.{self.minor}.{self.micro}"
        return f"{base}-{self.qualifier}" if self.qualifier is not None else base

    def __repr__(self) -> str:
        return f"Version('{self}')"


def parse_version(text: str) -> Version:
    if not isinstance(text, str):
        raise MalformedVersion(f"expected a string, got {type(text).__name__}")
    m = _VERSION_RE.match(text)
    if m is None:
        raise MalformedVersion(f"malformed version {text!r}")
    major, minor, micro, qualifier = m.groups()
    return Version(int(major), int(minor), int(micro), qualifier)


def format_version(v: Version) -> str:
    return str(v)


def compare_versions(a: Version, b: Version) -> Ordering:
    ka, kb = a.sort_key(), b.sort_key()
    if ka < kb:
        return Ordering.LESS
    if ka > kb:
        return Ordering.GREATER
    return Ordering.EQUAL


@dataclass(frozen=True)
class VersionRange:
    """A set of versions.

    ``exact`` set means the range admits only that version. Otherwise the
    optional bounds apply; both absent is the ANY range.
    """

    lower: Version | None = None
    lower_inclusive: bool = True
    upper: Version | None = None
    upper_inclusive: bool = False
    exact: Version | None = None

    def __post_init__(self) -> None:
        if self.exact is not None and (self.lower is not None or self.upper is not None):
            raise MalformedRange("an exact range cannot carry bounds")
        if self.lower is not None and self.upper is not None:
            order = compare_versions(self.lower, self.upper)
            if order is Ordering.GREATER:
                raise MalformedRange(f"lower bound {self.lower} above upper bound {self.upper}")
            if order is Ordering.EQUAL and not (self.lower_inclusive and self.upper_inclusive):
                raise MalformedRange("equal bounds must both be inclusive")

    @classmethod
    def any(cls) -> VersionRange:
        return cls()

    @classmethod
    def exactly(cls, v: Version) -> VersionRange:
        return cls(exact=v)

    @property
    def is_any(self) -> bool:
        return self.exact is None and self.lower is None and self.upper is None

    def contains(self, v: Version) -> bool:
        return range_contains(self, v)

    def __str__(self) -> str:
        return format_range(self)


ANY = VersionRange()


def parse_range(text: str) -> VersionRange:
    if not isinstance(text, str):
        raise MalformedRange(f"expected a string, got {type(text).__name__}")
    text = text.strip()
    if text == "*":
        return ANY
    if not text:
        raise MalformedRange("empty range")
    if text[0] in "[(":
        if text[-1] not in "])" or "," not in text:
            raise MalformedRange(f"malformed range {text!r}")
        body = text[1:-1]
        if body.count(",") != 1:
            raise MalformedRange(f"malformed range {text!r}")
        lo_text, hi_text = (part.strip() for part in body.split(","))
        try:
            lo = parse_version(lo_text) if lo_text else None
            hi = parse_version(hi_text) if hi_text else None
        except MalformedVersion as exc:
            raise MalformedRange(f"malformed range {text!r}: {exc}") from None
        if lo is None and hi is None:
            raise MalformedRange(f"range {text!r} has no bounds; use '*'")
        # an absent bound is open regardless of the bracket that sits next to it
        return VersionRange(
            lower=lo,
            lower_inclusive=lo is not None and text[0] == "[",
            upper=hi,
            upper_inclusive=hi is not None and text[-1] == "]",
        )
    try:
        return VersionRange.exactly(parse_version(text))
    except MalformedVersion as exc:
        raise MalformedRange(f"malformed range {text!r}: {exc}") from None


def format_range(r: VersionRange) -> str:
    if r.exact is not None:
        return str(r.exact)
    if r.is_any:
        return "*"
    left = "[" if r.lower is not None and r.lower_inclusive else "("
    right = "]" if r.upper is not None and r.upper_inclusive else ")"
    lo = str(r.lower) if r.lower is not None else ""
    hi = str(r.upper) if r.upper is not None else ""
    return f"{left}{lo},{hi}{right}"


def range_contains(r: VersionRange, v: Version) -> bool:
    if r.exact is not None:
        return compare_versions(r.exact, v) is Ordering.EQUAL
    if r.lower is not None:
        order = compare_versions(v, r.lower)
        if order is Ordering.LESS or (order is Ordering.EQUAL and not r.lower_inclusive):
            return False
    if r.upper is not None:
        order = compare_versions(v, r.upper)
        if order is Ordering.GREATER or (order is Ordering.EQUAL and not r.upper_inclusive):
            return False
    return True
