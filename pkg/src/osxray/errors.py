"""Shared exception types.

The service layer maps these onto HTTP status codes, so keep the
hierarchy flat and the messages human-readable.
"""


class ShapeError(ValueError):
    """Tensor extents are inconsistent with what an operation requires."""


class DomainError(ValueError):
    """An argument is outside the operation's documented domain."""


class ContractError(RuntimeError):
    """A caller violated an API contract (e.g. backward on a non-scalar)."""


class StateError(RuntimeError):
    """An object is not in a state that permits the requested operation."""


class FormatError(ValueError):
    """A byte stream does not parse as the expected file format."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
