"""Deterministic simulator for re-platforming blockchain applications.

Toy chains with accounts, tokens, and a tiny contract VM; a library of
migration moves (snapshot, burn, replay, shard, translate, ...); a
planner that maps scenario and fidelity requirements to applicable
moves; and a batch runner that turns a JSON plan into a reproducible,
self-verifying bundle of artifacts.
"""

from .canonical import SCHEMA_VERSION
from .errors import ChainmigError, OperationError, PlanValidationError

__version__ = "0.1.0"

__all__ = [
    "SCHEMA_VERSION",
    "ChainmigError",
    "OperationError",
    "PlanValidationError",
    "__version__",
]
