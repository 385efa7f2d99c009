"""Canonical byte encodings and digests.

Every digest in the simulator is SHA-256 over a canonical byte string, so
two processes that agree on the logical content always agree on the digest.
Two encodings are used:

1. canonical JSON: UTF-8, key-sorted maps, decimal integers, compact
   separators.  Used for documents (genesis files, state exports, plans,
   run artifacts).
2. canonical binary: length-prefixed fields in declared order with
   big-endian fixed-width integers.  Used for ledger-internal digests
   (state roots, transaction ids, block digests) where byte stability
   must not depend on a JSON library.
"""

from __future__ import annotations

import hashlib
import json

SCHEMA_VERSION = 1


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hexdigest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj) -> bytes:
    """Canonical JSON bytes: sorted keys, compact separators, UTF-8."""
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def doc_digest(obj) -> str:
    """Hex digest of an object's canonical JSON form."""
    return hexdigest(canonical_json(obj))


def load_json(data: bytes):
    return json.loads(data.decode("utf-8"))


def enc_int(value: int, width: int) -> bytes:
    """Big-endian fixed-width unsigned integer."""
    if value < 0:
        raise ValueError("canonical integers are unsigned")
    return value.to_bytes(width, "big")


def enc_bytes(data: bytes) -> bytes:
    """Length-prefixed byte string (u32 length)."""
    return enc_int(len(data), 4) + data


def enc_str(text: str) -> bytes:
    return enc_bytes(text.encode("utf-8"))
