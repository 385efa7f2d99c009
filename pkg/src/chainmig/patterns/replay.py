"""Re-issue captured history on the target chain.

Transactions are partitioned into dependency groups (union-find over
the account sets they touch), so any two transactions that could
interact stay in one group and replay in their original relative
order.  Groups are independent and can be interleaved round-robin
under a seed.  `exact` mode replays one-for-one; `aggregated` mode
nets the plain native transfers inside each group into a minimal
settlement set and anchors the netting evidence, trading history
fidelity for fees.
"""

from __future__ import annotations

import random

from ..canonical import canonical_json, hexdigest
from ..errors import OperationError
from ..ledger import ChainInstance, burn_sink, contract_address, derive_address
from .capture import MappingTable
from .poe import PoEStore, anchor_digest


def _record_accounts(record: dict, source_scheme: str) -> set[str]:
    accounts = {record["sender"], record["receiver"]}
    if record["kind"] == "deploy_contract":
        accounts.add(contract_address(record["sender"], record["nonce"], source_scheme))
    return accounts


def dependency_groups(records: list[dict], source_scheme: str = "long") -> list[list[dict]]:
    """Union-find over touched-account sets; groups keep capture order."""
    parent: dict[str, str] = {}

    def find(x: str) -> str:
        root = x
        while parent.setdefault(root, root) != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(a: str, b: str) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    for record in records:
        accounts = sorted(_record_accounts(record, source_scheme))
        for other in accounts[1:]:
            union(accounts[0], other)

    grouped: dict[str, list[dict]] = {}
    order: list[str] = []
    for record in records:
        root = find(next(iter(sorted(_record_accounts(record, source_scheme)))))
        if root not in grouped:
            grouped[root] = []
            order.append(root)
        grouped[root].append(record)
    return [grouped[root] for root in order]


class _Replayer:
    def __init__(
        self,
        target: ChainInstance,
        snapshot: dict,
        mapping: MappingTable | None,
        external_policy: str,
        fee_policy: str,
        max_retries: int,
    ):
        self.target = target
        self.snapshot = snapshot
        self.mapping = mapping
        self.external_policy = external_policy
        self.fee_policy = fee_policy
        self.max_retries = max_retries
        self.source_scheme = snapshot["source_config"]["id_scheme"]
        self.contract_map: dict[str, str] = {}
        self.deployed_targets: set[str] = set()
        self.pairs: list[tuple[str, str]] = []
        self.skipped: list[dict] = []
        self.retries: list[dict] = []
        self.resigned = 0
        self.fee_paid_target: dict[str, int] = {}
        self.fee_paid_source: dict[str, int] = {}
        self.warnings: list[str] = []
        if mapping is not None:
            for entry in mapping.entries:
                if entry.kind == "contract":
                    self.contract_map[entry.source_id] = entry.target_id

    def _bind_stand_in(self, source_address: str, target_address: str) -> None:
        if self.mapping is None or self.mapping.by_source(source_address) is not None:
            return
        ref = f"account:{source_address}"
        if self.mapping.by_ref(ref) is None:
            self.mapping.add(ref, "account", source_address, target_address, "stand_in")

    def signer_for(self, source_address: str) -> str | None:
        rec = self.snapshot["accounts"].get(source_address, {})
        public_key = rec.get("public_key") or None
        if public_key and self.target.registry.has_key(public_key):
            return public_key
        if self.external_policy == "stand_in":
            key = self.target.registry.create_key_from_label(f"standin:{source_address}")
            self._bind_stand_in(source_address, self.target.address_for(key))
            return key
        if self.external_policy == "exclude":
            return None
        raise OperationError(
            "unresolvable_external_account", f"no key for {source_address[:12]}"
        )

    def translate(self, source_address: str) -> str:
        if source_address == burn_sink(self.source_scheme):
            return burn_sink(self.target.config.id_scheme)
        if source_address in self.contract_map:
            return self.contract_map[source_address]
        if self.mapping is not None:
            entry = self.mapping.by_source(source_address)
            if entry is not None:
                return entry.target_id
        rec = self.snapshot["accounts"].get(source_address, {})
        public_key = rec.get("public_key") or None
        if public_key and self.target.registry.has_key(public_key):
            return derive_address(public_key, self.target.config.id_scheme)
        if self.external_policy == "stand_in":
            key = self.target.registry.create_key_from_label(f"standin:{source_address}")
            address = self.target.address_for(key)
            self._bind_stand_in(source_address, address)
            return address
        return source_address

    def fee_for(self, record: dict) -> int:
        if self.fee_policy == "copy":
            return record["fee_offered"]
        return self.target.config.tx_fee

    def replay_one(self, record: dict) -> str | None:
        """Build, sign, and submit the target twin of one record.
        Returns the target tx id, or None when the record is skipped."""
        kind = record["kind"]
        if record["sender"] in self.snapshot.get("contracts", {}):
            self.skipped.append({"tx_id": record["tx_id"], "reason": "contract_emitted"})
            return None
        signer = self.signer_for(record["sender"])
        if signer is None:
            self.skipped.append({"tx_id": record["tx_id"], "reason": "external_excluded"})
            return None

        payload = dict(record["payload"])
        if kind == "deploy_contract":
            receiver = self.target.address_for(signer)
        elif kind == "poe_anchor":
            receiver = self.target.address_for(signer)
        elif kind == "burn":
            receiver = burn_sink(self.target.config.id_scheme)
        else:
            receiver = self.translate(record["receiver"])
        if (
            kind == "call_contract"
            and receiver not in self.target.state.contracts
            and receiver not in self.deployed_targets
        ):
            self.skipped.append({"tx_id": record["tx_id"], "reason": "unmapped_contract"})
            return None

        fee = self.fee_for(record)
        nonce = None
        if kind == "deploy_contract":
            sender_target = self.target.address_for(signer)
            nonce = self.target.next_nonce(sender_target)
            source_contract = contract_address(
                record["sender"], record["nonce"], self.source_scheme
            )
            target_contract = contract_address(
                sender_target, nonce, self.target.config.id_scheme
            )
            self.contract_map[source_contract] = target_contract
            self.deployed_targets.add(target_contract)
            if self.mapping is not None and self.mapping.by_source(source_contract) is None:
                self.mapping.add(
                    f"contract:{source_contract}", "contract",
                    source_contract, target_contract, "replayed_deploy",
                )

        flushed = False
        for attempt in range(self.max_retries + 1):
            tx = self.target.make_tx(
                signer, receiver, kind, payload, fee=fee, nonce=nonce
            )
            result = self.target.submit_tx(tx, operator_pass=True)
            if result.accepted:
                if attempt:
                    self.retries.append(
                        {"tx_id": record["tx_id"], "attempts": attempt, "final_fee": fee}
                    )
                break
            if result.reason == "insufficient_fee" and attempt < self.max_retries:
                fee += 1
                continue
            if not flushed and self.target.mempool and attempt < self.max_retries:
                # admission cannot spend credits still in the pool; commit
                # the pool once so this record lands in the next block
                self.target.produce_block()
                flushed = True
                continue
            raise OperationError(
                result.reason or "replay_failed",
                f"replaying {record['tx_id'][:12]} was rejected",
            )
        else:
            raise OperationError("fee_exhaustion", "fee retry budget exhausted")

        if record.get("signature") != tx.signature:
            self.resigned += 1
        self.pairs.append((record["tx_id"], tx.tx_id))
        sender_source = record["sender"]
        if not record.get("synthetic"):
            self.fee_paid_source[sender_source] = (
                self.fee_paid_source.get(sender_source, 0) + record["fee_offered"]
            )
        self.fee_paid_target[sender_source] = (
            self.fee_paid_target.get(sender_source, 0) + fee
        )
        return tx.tx_id


def _net_settlement(transfers: list[dict]) -> tuple[dict[str, int], list[tuple[str, str, int]]]:
    """Net per-account deltas for plain native transfers, plus a minimal
    sender-to-receiver settlement list realizing them."""
    delta: dict[str, int] = {}
    for record in transfers:
        amount = int(record["payload"]["amount"])
        delta[record["sender"]] = delta.get(record["sender"], 0) - amount
        delta[record["receiver"]] = delta.get(record["receiver"], 0) + amount
    owed = sorted((a, -d) for a, d in delta.items() if d < 0)
    due = sorted((a, d) for a, d in delta.items() if d > 0)
    moves: list[tuple[str, str, int]] = []
    di = 0
    for payer, remaining in owed:
        while remaining and di < len(due):
            receiver, want = due[di]
            take = min(remaining, want)
            moves.append((payer, receiver, take))
            remaining -= take
            if take == want:
                di += 1
            else:
                due[di] = (receiver, want - take)
    return delta, moves


def replay_transactions(
    target: ChainInstance,
    snapshot: dict,
    mapping: MappingTable | None = None,
    mode: str = "exact",
    order: str = "grouped",
    seed: int = 0,
    external_policy: str = "stand_in",
    fee_policy: str = "copy",
    max_retries: int = 10,
    include_operator: bool = False,
    operator_pubkey: str | None = None,
    poe_store: PoEStore | None = None,
) -> dict:
    """Drive captured transactions back through the target chain."""
    if mode not in ("exact", "aggregated"):
        raise OperationError("bad_mode", f"unknown replay mode {mode!r}")
    if order not in ("grouped", "interleaved"):
        raise OperationError("bad_mode", f"unknown replay order {order!r}")
    if external_policy not in ("stand_in", "exclude", "fail"):
        raise OperationError("bad_mode", f"unknown external policy {external_policy!r}")

    records = [
        r for r in snapshot.get("captured_txs", [])
        if include_operator or not r.get("operator")
    ]
    worker = _Replayer(target, snapshot, mapping, external_policy, fee_policy, max_retries)

    seen_receivers: set[str] = set()
    for record in records:
        sender = record["sender"]
        if sender not in snapshot.get("contracts", {}):
            signer = worker.signer_for(sender)
            if signer is not None and sender not in seen_receivers:
                if target.get_account(target.address_for(signer)) is None:
                    raise OperationError(
                        "missing_initial_state",
                        f"sender {sender[:12]} has no account on {target.chain_id}",
                    )
        seen_receivers.add(record["receiver"])

    groups = dependency_groups(records, worker.source_scheme)
    poe_anchors = []
    netting_docs = []

    if mode == "aggregated":
        prepared_groups = []
        for gi, group in enumerate(groups):
            nettable = [
                r for r in group
                if r["kind"] == "transfer_native"
                and r["sender"] not in snapshot.get("contracts", {})
            ]
            rest = [r for r in group if r not in nettable]
            delta, moves = _net_settlement(nettable)
            for r in nettable:  # the fees these originals paid still count
                worker.fee_paid_source[r["sender"]] = (
                    worker.fee_paid_source.get(r["sender"], 0) + r["fee_offered"]
                )
            synthetic = []
            for payer, receiver, amount in moves:
                synthetic.append(
                    {
                        "tx_id": f"net:{gi}:{len(synthetic)}",
                        "sender": payer,
                        "receiver": receiver,
                        "nonce": 0,
                        "kind": "transfer_native",
                        "payload": {"amount": amount},
                        "fee_offered": target.config.tx_fee,
                        "signature": "",
                        "operator": False,
                        "synthetic": True,
                    }
                )
            if nettable:
                netting_docs.append(
                    {
                        "kind": "netting_evidence",
                        "group": gi,
                        "original_tx_ids": [r["tx_id"] for r in nettable],
                        "net_deltas": {a: d for a, d in sorted(delta.items())},
                        "settlement_moves": [
                            {"sender": s, "receiver": r, "amount": v} for s, r, v in moves
                        ],
                    }
                )
            prepared_groups.append(rest + synthetic)
        groups = prepared_groups

    produced_blocks = 0
    if order == "grouped":
        for group in groups:
            for record in group:
                worker.replay_one(record)
                if len(target.mempool) >= target.config.block_capacity:
                    target.produce_block()
                    produced_blocks += 1
            if target.mempool:
                block = target.produce_block()
                produced_blocks += 1
                target.advance_until_final(block.number)
    else:
        rng = random.Random(seed)
        queues = [list(group) for group in groups]
        lane_order = list(range(len(queues)))
        rng.shuffle(lane_order)
        while any(queues):
            for lane in lane_order:
                if queues[lane]:
                    worker.replay_one(queues[lane].pop(0))
            if target.mempool:
                target.produce_block()
                produced_blocks += 1
    while target.mempool:
        target.produce_block()
        produced_blocks += 1
    if target.head > 0:
        target.advance_until_final(target.head)

    for doc in netting_docs:
        if poe_store is not None and operator_pubkey is not None:
            digest = poe_store.put(doc)
            tx_id = anchor_digest(target, operator_pubkey, digest, note="netting_evidence")
            poe_anchors.append({"digest": digest, "tx_id": tx_id, "group": doc["group"]})
        else:
            poe_anchors.append(
                {"digest": hexdigest(canonical_json(doc)), "tx_id": None, "group": doc["group"]}
            )

    fee_delta = {
        address: worker.fee_paid_source.get(address, 0) - worker.fee_paid_target.get(address, 0)
        for address in set(worker.fee_paid_source) | set(worker.fee_paid_target)
    }
    report = {
        "kind": "replay_report",
        "chain_id": target.chain_id,
        "mode": mode,
        "order": order,
        "seed": seed,
        "groups": len(groups),
        "replayed": len(worker.pairs),
        "skipped": worker.skipped,
        "retries": worker.retries,
        "resigned": worker.resigned,
        "tx_pairs": worker.pairs,
        "fee_delta": {a: d for a, d in sorted(fee_delta.items()) if d},
        "fee_total_target": sum(worker.fee_paid_target.values()),
        "contract_map": dict(sorted(worker.contract_map.items())),
        "netting": netting_docs,
        "poe": poe_anchors,
        "blocks_produced": produced_blocks,
        "source_snapshot_digest": snapshot.get("digest", ""),
    }
    return report
