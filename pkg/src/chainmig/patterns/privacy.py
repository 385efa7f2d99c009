"""Symmetric sealing for data that must ride a chain other parties read.

Toy cipher: counter-mode keystream of SHA-256(key || nonce || counter)
blocks, with a digest MAC over the ciphertext.  The nonce is derived
from key and plaintext, so sealing is deterministic and reproducible
run to run; never reuse a real-world scheme this way.
"""

from __future__ import annotations

import hashlib
import json

from ..canonical import canonical_json, hexdigest
from ..errors import OperationError
from ..ledger import ChainInstance
from .poe import PoEStore, anchor_digest


def derive_sealing_key(passphrase) -> str:
    """Stretch a passphrase into the 256-bit hex key the sealer takes."""
    raw = passphrase.encode("utf-8") if isinstance(passphrase, str) else bytes(passphrase)
    return hashlib.sha256(b"sealkey:" + raw).hexdigest()


def _normalize_key(key) -> bytes:
    if isinstance(key, str):
        try:
            key = bytes.fromhex(key)
        except ValueError:
            raise OperationError("bad_key", "string keys must be hex") from None
    if not isinstance(key, bytes) or len(key) != 32:
        raise OperationError("bad_key", "keys are exactly 256 bits")
    return hashlib.sha256(b"seal:" + key).digest()


def _keystream(key: bytes, nonce: bytes, length: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(key + nonce + counter.to_bytes(8, "big")).digest()
        counter += 1
    return bytes(out[:length])


def encrypt_payload(key, content) -> dict:
    """Seal bytes / str / JSON-able content into a portable envelope."""
    if isinstance(content, bytes):
        plain = content
    elif isinstance(content, str):
        plain = content.encode("utf-8")
    else:
        plain = canonical_json(content)
    key_bytes = _normalize_key(key)
    nonce = hashlib.sha256(b"nonce:" + key_bytes + plain).digest()[:16]
    cipher = bytes(a ^ b for a, b in zip(plain, _keystream(key_bytes, nonce, len(plain))))
    mac = hexdigest(b"mac:" + key_bytes + nonce + cipher)
    return {
        "kind": "sealed",
        "nonce": nonce.hex(),
        "ciphertext": cipher.hex(),
        "mac": mac,
    }


def encrypt_state(entries: dict, key) -> dict:
    """Seal every value of a state map; keys stay readable."""
    return {name: encrypt_payload(key, value) for name, value in sorted(entries.items())}


def decrypt_state(entries: dict, key) -> dict:
    """Inverse of encrypt_state for JSON-able values."""
    return {
        name: json.loads(decrypt_payload(key, envelope))
        for name, envelope in sorted(entries.items())
    }


def decrypt_payload(key, envelope: dict) -> bytes:
    key_bytes = _normalize_key(key)
    try:
        nonce = bytes.fromhex(envelope["nonce"])
        cipher = bytes.fromhex(envelope["ciphertext"])
        mac = envelope["mac"]
    except (KeyError, ValueError):
        raise OperationError("auth_failure", "envelope is malformed") from None
    if hexdigest(b"mac:" + key_bytes + nonce + cipher) != mac:
        raise OperationError("auth_failure", "MAC check failed")
    return bytes(a ^ b for a, b in zip(cipher, _keystream(key_bytes, nonce, len(cipher))))


def seal_and_anchor(
    chain: ChainInstance,
    owner_pubkey: str,
    key,
    content,
    store: PoEStore | None = None,
) -> dict:
    """Seal content, park the envelope (off-chain store when given,
    otherwise inline in the anchor payload), and anchor its digest."""
    envelope = encrypt_payload(key, content)
    digest = hexdigest(canonical_json(envelope))
    if store is not None:
        store.put(envelope)
        tx_id = anchor_digest(chain, owner_pubkey, digest, note="sealed:off_chain")
        placement = "off_chain"
    else:
        sender = chain.address_for(owner_pubkey)
        tx = chain.make_tx(
            owner_pubkey, sender, "poe_anchor",
            {"digest": digest, "note": "sealed:on_chain", "sealed": envelope},
        )
        chain.submit_or_raise(tx, operator_pass=True)
        chain.produce_block()
        tx_id = tx.tx_id
        placement = "on_chain"
    return {
        "kind": "sealed_anchor",
        "digest": digest,
        "tx_id": tx_id,
        "placement": placement,
        "envelope": envelope,
    }
