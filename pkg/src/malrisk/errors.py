"""Exception types shared across the package."""

from __future__ import annotations


class DataError(ValueError):
    """Input data violates a contract (bad row, inconsistent metadata, ...)."""


class ParseError(DataError):
    """A textual record could not be parsed.

    ``line`` is 1-based and counts the header when the record came from a CSV.
    """

    def __init__(self, message: str, *, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
