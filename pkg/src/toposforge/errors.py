"""Exception hierarchy and the global size-cap mechanism.

Every construction that enumerates a carrier consults a cap before
allocating; blowing the cap raises ``SizeCapError`` with enough context to
tell the caller *what* exploded instead of running away.
"""

from __future__ import annotations

import os

DEFAULT_CAP = 10**6
CAP_ENV_VAR = "TOPOSFORGE_CAP"


class ToposError(Exception):
    """Base class for all structured errors raised by this package."""


class ValidationError(ToposError):
    """A law or invariant failed during validation of input data.

    ``witness`` carries the offending items (e.g. the triple violating
    associativity) so reports can name them.
    """

    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness


class InputError(ToposError):
    """Malformed input file or description (parse/shape problems)."""


class SizeCapError(ToposError):
    """An enumeration would exceed the configured size cap."""

    def __init__(self, what: str, requested: int, cap: int):
        super().__init__(f"{what}: would enumerate {requested} > cap {cap}")
        self.what = what
        self.requested = requested
        self.cap = cap


class BoundOverflowError(ToposError):
    """A constructed fiber does not fit under the universe bound.

    ``required`` is the minimal bound that would have sufficed.
    """

    def __init__(self, what: str, size: int, bound: int):
        super().__init__(f"{what}: fiber of size {size} needs bound >= {size + 1}, have {bound}")
        self.what = what
        self.size = size
        self.required = size + 1
        self.bound = bound


def global_cap() -> int:
    raw = os.environ.get(CAP_ENV_VAR)
    if raw is None:
        return DEFAULT_CAP
    try:
        value = int(raw)
    except ValueError as exc:
        raise InputError(f"{CAP_ENV_VAR} must be an integer, got {raw!r}") from exc
    if value < 1:
        raise InputError(f"{CAP_ENV_VAR} must be >= 1, got {value}")
    return value


def guard_size(what: str, requested: int, cap: int | None = None) -> int:
    """Check ``requested`` against ``cap`` (or the global cap); return it."""
    limit = global_cap() if cap is None else cap
    if requested > limit:
        raise SizeCapError(what, requested, limit)
    return requested
