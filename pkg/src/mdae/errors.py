"""Exception hierarchy shared by every stage of the restart pipeline.

Structural failures carry a ``certificate`` (usually a Dulmage-Mendelsohn
decomposition) so that callers can explain *why* a system was rejected.
"""

from __future__ import annotations

from typing import Any


class MdaeError(Exception):
    """Base class for all library errors."""

    exit_code = 3

    def __init__(self, message: str, certificate: Any = None):
        super().__init__(message)
        self.certificate = certificate


# expression kernel
class MissingVariable(MdaeError):
    pass


class EpsilonSingularity(MdaeError):
    pass


# structural analysis
class StructurallySingular(MdaeError):
    pass


class NonConvergent(MdaeError):
    pass


class NotRelated(MdaeError):
    pass


class NoAdmissibleMatching(MdaeError):
    pass


# rescaling and restart
class UnrescalableEquation(MdaeError):
    pass


class Rule1Violation(MdaeError):
    pass


class UndefinedRename(MdaeError):
    pass


class NoGoodSolution(MdaeError):
    exit_code = 2


class InfiniteOffset(MdaeError):
    pass


# numerics
class SingularJacobian(MdaeError):
    pass


class NonConvergence(MdaeError):
    pass


# front end
class ModelError(MdaeError):
    """Parse or validation error; ``errors`` lists (line, column, message)."""

    exit_code = 4

    def __init__(self, message: str, errors: list[tuple[int, int, str]] | None = None):
        super().__init__(message)
        self.errors = errors or []
