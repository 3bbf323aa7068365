"""Exception taxonomy shared across the package.

Parse and integrity errors carry enough context (line numbers, offending
ids) to make a broken input diagnosable from the message alone.
"""
from __future__ import annotations

__all__ = ["ParseError", "IntegrityError", "ConfigError", "ProtocolError", "NumericError"]


class ParseError(ValueError):
    """A malformed input file row; the message names the line."""


class IntegrityError(ValueError):
    """Referential or count invariants violated by otherwise well-formed input."""


class ConfigError(ValueError):
    """A parameter outside its documented domain."""


class ProtocolError(RuntimeError):
    """A training request that violates the declared evaluation protocol."""


class NumericError(RuntimeError):
    """Non-finite values where the contract requires finite math."""
