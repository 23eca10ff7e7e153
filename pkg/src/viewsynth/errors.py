"""Exception types shared across the package."""

from __future__ import annotations


class InvalidArgumentError(ValueError):
    pass


class AmbiguousLogError(ValueError):
    """Rotation angle too close to pi for a unique logarithm."""


class ParseError(ValueError):
    """Malformed file contents.

    ``offset`` is a byte offset for binary formats and ``line`` a 1-based
    line number for text formats; whichever does not apply is None.
    """

    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        where = []
        if offset is not None:
            where.append(f"byte {offset}")
        if line is not None:
            where.append(f"line {line}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.offset = offset
        self.line = line


class DivergedError(RuntimeError):
    """Optimization produced a non-finite loss.

    Carries the last iterate that still had a finite loss and, when raised
    from hierarchical refinement, the level that failed.
    """

    def __init__(self, message: str, last_iterate=None, level: int | None = None):
        if level is not None:
            message = f"level {level}: {message}"
        super().__init__(message)
        self.last_iterate = last_iterate
        self.level = level
