"""Error types shared across the simulator.

Every failure carries a short machine-readable ``code`` so tests and the
batch runner can branch on the reason without parsing prose.
"""

from __future__ import annotations


class ChainmigError(Exception):
    """Base class for all simulator errors."""


class OperationError(ChainmigError):
    """An operation was refused or failed; ``code`` names the reason."""

    def __init__(self, code: str, message: str = "", **details):
        self.code = code
        self.details = details
        super().__init__(f"{code}: {message}" if message else code)


class PlanValidationError(ChainmigError):
    """A migration plan failed validation; carries the violation list."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(v["message"] for v in self.violations)
        super().__init__(f"plan invalid: {lines}")
