"""Error type shared by the whole package."""

from __future__ import annotations


class VordError(ValueError):
    """Raised on contract violations, carrying a stable machine-readable code.

    The ``code`` is a short kebab-case identifier ("empty-support",
    "shape-mismatch", ...) so callers can branch on failure kinds without
    parsing messages.
    """

    def __init__(self, code: str, message: str | None = None):
        self.code = code
        super().__init__(message if message is not None else code)
