"""Content-addressed off-chain storage with on-chain existence anchors.

Bulk migration artifacts (snapshots, mapping tables, contract sources)
live off-chain in a `PoEStore`; only their digests go on chain, as
`poe_anchor` transactions.  `audit_store` cross-checks the two sides.
"""

from __future__ import annotations

from pathlib import Path

from ..canonical import canonical_json, hexdigest
from ..errors import OperationError
from ..ledger import ChainInstance


class PoEStore:
    """Digest-keyed blob store; directory-backed when `root` is given,
    in-memory otherwise."""

    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root is not None else None
        self._blobs: dict[str, bytes] = {}
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def _encode(content) -> bytes:
        if isinstance(content, bytes):
            return content
        if isinstance(content, str):
            return content.encode("utf-8")
        return canonical_json(content)

    def put(self, content) -> str:
        blob = self._encode(content)
        digest = hexdigest(blob)
        if self.root is not None:
            path = self.root / digest
            try:
                if not path.exists():
                    path.write_bytes(blob)
            except OSError as exc:
                raise OperationError("store_failure", f"cannot persist {digest[:12]}: {exc}")
        else:
            self._blobs[digest] = blob
        return digest

    def get(self, digest: str) -> bytes:
        if self.root is not None:
            path = self.root / digest
            if not path.exists():
                raise OperationError("not_stored", f"no blob {digest[:12]}")
            try:
                blob = path.read_bytes()
            except OSError as exc:
                raise OperationError("store_failure", f"cannot read {digest[:12]}: {exc}")
        else:
            if digest not in self._blobs:
                raise OperationError("not_stored", f"no blob {digest[:12]}")
            blob = self._blobs[digest]
        if hexdigest(blob) != digest:
            raise OperationError("store_corrupt", f"blob {digest[:12]} fails its digest")
        return blob

    def has(self, digest: str) -> bool:
        if self.root is not None:
            return (self.root / digest).exists()
        return digest in self._blobs

    def digests(self) -> list[str]:
        if self.root is not None:
            return sorted(p.name for p in self.root.iterdir() if p.is_file())
        return sorted(self._blobs)


def anchor_digest(chain: ChainInstance, owner_pubkey: str, digest: str, note: str = "") -> str:
    """Record a digest on chain; the anchor is a self-addressed tx."""
    sender = chain.address_for(owner_pubkey)
    tx = chain.make_tx(owner_pubkey, sender, "poe_anchor", {"digest": digest, "note": note})
    chain.submit_or_raise(tx, operator_pass=True)
    block = chain.produce_block()
    if tx.tx_id not in {t.tx_id for t in block.tx_list}:
        reason = dict(chain.drop_log).get(tx.tx_id, "anchor_failed")
        raise OperationError(reason, "anchor did not commit")
    return tx.tx_id


def anchored_digests(chain: ChainInstance) -> dict[str, list[str]]:
    """digest -> anchoring tx ids, over the whole chain."""
    found: dict[str, list[str]] = {}
    for block in chain.blocks:
        for tx in block.tx_list:
            if tx.kind != "poe_anchor":
                continue
            digest = tx.payload_obj().get("digest", "")
            if digest:
                found.setdefault(digest, []).append(tx.tx_id)
    return found


def audit_store(chain: ChainInstance, store: PoEStore, digests=None) -> dict:
    """Check that anchored digests resolve in the store and vice versa."""
    on_chain = anchored_digests(chain)
    wanted = sorted(digests) if digests is not None else sorted(on_chain)
    verified = []
    missing_in_store = []
    missing_on_chain = []
    for digest in wanted:
        stored = store.has(digest)
        anchored = digest in on_chain
        if stored and anchored:
            store.get(digest)  # digest re-check on read
            verified.append(digest)
        elif not stored:
            missing_in_store.append(digest)
        else:
            missing_on_chain.append(digest)
    return {
        "kind": "poe_audit",
        "chain_id": chain.chain_id,
        "verified": verified,
        "missing_in_store": missing_in_store,
        "missing_on_chain": missing_on_chain,
        "ok": not missing_in_store and not missing_on_chain,
    }
