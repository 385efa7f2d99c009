"""Capture-side moves: quiesce and read the source chain.

`take_snapshot` is the workhorse: announce a freeze a few blocks out,
let traffic drain, wait for the boundary to be final, then read every
in-scope record.  Aggregation and burning prepare accounts for transfer
or retire them; the mapping table records how source identifiers map to
target identifiers and is anchored like any other artifact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..canonical import canonical_json, hexdigest
from ..errors import OperationError
from ..ledger import ChainInstance, burn_sink
from .poe import PoEStore, anchor_digest


def _scope_set(chain: ChainInstance, scope) -> set[str]:
    return set(chain.app_addresses(scope))


def take_snapshot(
    chain: ChainInstance,
    scope="all",
    mode: str = "current",
    grace_blocks: int = 1,
    freeze_block: int | None = None,
    workload=None,
    block_budget: int = 200,
    freeze_chain: bool = True,
) -> dict:
    """Two-phase capture of in-scope state.

    Phase one reads a full extract right away and announces a freeze
    `grace_blocks` ahead (or at `freeze_block`) so in-flight traffic can
    land; `workload`, when given, keeps submitting during the drain
    (late submissions bounce off the freeze).  Phase two produces blocks
    until the last unfrozen block is final, collects everything touched
    since the extract as a delta, re-checks that nothing in scope landed
    past the boundary, then reads the merged final state.
    `mode="genesis"` additionally captures the genesis document and the
    full block sequence for history-grade fidelity.
    """
    if mode not in ("current", "genesis"):
        raise OperationError("bad_mode", f"unknown snapshot mode {mode!r}")
    in_scope = _scope_set(chain, scope)
    initiate_block = chain.head
    initial_extract = {}
    for address in sorted(in_scope, key=bytes.fromhex):
        record = chain.address_record(address)
        if record:
            initial_extract[address] = record

    frozen_at = None
    if freeze_chain:
        frozen_at = freeze_block if freeze_block is not None else chain.head + 1 + grace_blocks
        if frozen_at <= initiate_block:
            raise OperationError(
                "blocks_out_of_order",
                f"freeze block {frozen_at} is not past the extract at {initiate_block}",
            )
        chain.freeze(frozen_at, scope)
        boundary = frozen_at - 1
        produced = 0
        while boundary > chain.head or not chain.finality_reached(boundary):
            if produced >= block_budget:
                raise OperationError(
                    "finality_timeout", f"boundary {boundary} still unconfirmed"
                )
            if workload is not None:
                workload(chain, chain.head + 1)
            chain.produce_block()
            produced += 1

    delta = []
    for address, entry in sorted(
        chain.read_delta(initiate_block).items(), key=lambda kv: bytes.fromhex(kv[0])
    ):
        if address in in_scope:
            delta.append(
                {"address": address, "record": entry.record, "tx_ids": list(entry.tx_ids)}
            )

    if frozen_at is not None:
        for block in chain.blocks[frozen_at:]:
            for tx in block.tx_list:
                if tx.tx_id in chain.operator_tx_ids:
                    continue
                if tx.sender in in_scope or tx.receiver in in_scope:
                    raise OperationError(
                        "freeze_violated",
                        f"tx {tx.tx_id[:12]} crossed the freeze in block {block.number}",
                    )

    accounts = {}
    contracts = {}
    contract_states = {}
    for address in sorted(in_scope, key=bytes.fromhex):
        acct = chain.state.accounts.get(address)
        if acct is not None:
            accounts[address] = acct.record()
        record = chain.address_record(address)
        if "contract" in record:
            contracts[address] = record["contract"]
        if "contract_state" in record:
            state_rec = record["contract_state"]
            cstate = chain.state.contract_states[address]
            code = chain.state.contracts[address].code
            state_rec["logical"] = {
                str(k): v for k, v in sorted(cstate.logical_items(code.dialect).items())
            }
            contract_states[address] = state_rec

    held_tokens = set()
    for rec in accounts.values():
        held_tokens.update(rec["tokens"])
    token_issuers = {
        token: issuer
        for token, issuer in chain.state.token_issuers.items()
        if token in held_tokens or issuer in in_scope
    }

    captured_txs = []
    for block in chain.blocks[1:]:
        for tx in block.tx_list:
            if tx.sender in in_scope or tx.receiver in in_scope:
                rec = tx.record()
                rec["block"] = block.number
                rec["operator"] = tx.tx_id in chain.operator_tx_ids
                captured_txs.append(rec)

    doc = {
        "schema_version": 1,
        "kind": "snapshot",
        "mode": mode,
        "source_chain_id": chain.chain_id,
        "source_config": chain.config.to_record(),
        "initiate_block": initiate_block,
        "freeze_block": frozen_at,
        "taken_at_block": chain.head,
        "scope": "all" if scope == "all" else sorted(in_scope),
        "initial_extract": initial_extract,
        "delta": delta,
        "accounts": accounts,
        "contracts": contracts,
        "contract_states": contract_states,
        "token_issuers": dict(sorted(token_issuers.items())),
        "captured_txs": captured_txs,
        "state_root": chain.blocks[-1].state_root,
    }
    if mode == "genesis":
        doc["genesis_doc"] = chain.genesis_doc
        doc["blocks"] = [block.record() for block in chain.blocks]
    doc["digest"] = hexdigest(canonical_json(doc))
    return doc


def snapshot_body_digest(snapshot: dict) -> str:
    body = {k: v for k, v in snapshot.items() if k != "digest"}
    return hexdigest(canonical_json(body))


def verify_snapshot(snapshot: dict) -> None:
    if snapshot.get("digest") != snapshot_body_digest(snapshot):
        raise OperationError("snapshot_corrupt", "digest does not match the body")


def aggregate_balances(
    chain: ChainInstance,
    groups: dict[str, list[str]],
    mode: str = "off_chain",
) -> dict:
    """Collapse many member accounts into per-group figures.

    `off_chain` only reads: totals plus a membership bitmap over the
    sorted member universe.  `on_chain` actually sweeps spendable
    balances into one collector account per group (members' keys must
    be in the chain's registry); dust below the fee floor stays put and
    is reported.
    """
    if mode not in ("off_chain", "on_chain"):
        raise OperationError("bad_mode", f"unknown aggregation mode {mode!r}")
    universe = sorted({m for members in groups.values() for m in members})
    index = {address: i for i, address in enumerate(universe)}
    report_groups = {}
    sweep_txs = []
    dust = []
    fee = chain.config.tx_fee

    for gid in sorted(groups):
        members = sorted(set(groups[gid]))
        bits = 0
        for address in members:
            bits |= 1 << index[address]
        width = (len(universe) + 7) // 8 or 1
        native_total = 0
        token_totals: dict[str, int] = {}
        contributions: dict[str, dict] = {}
        for address in members:
            acct = chain.state.accounts.get(address)
            if acct is None:
                continue
            held = {t: v for t, v in sorted(acct.tokens.items()) if v}
            contributions[address] = {"native": acct.native, "tokens": held}
            native_total += acct.native
            for token, value in held.items():
                token_totals[token] = token_totals.get(token, 0) + value
        entry = {
            "members": members,
            "bitmap": bits.to_bytes(width, "big").hex(),
            "native_total": native_total,
            "token_totals": dict(sorted(token_totals.items())),
            "contributions": contributions,
        }
        if mode == "on_chain":
            collector_key = chain.registry.create_key_from_label(
                f"aggregate:{chain.chain_id}:{gid}"
            )
            collector = chain.address_for(collector_key)
            swept = 0
            swept_by_member: dict[str, int] = {}
            for address in members:
                acct = chain.state.accounts.get(address)
                if acct is None or acct.public_key is None:
                    continue
                if not chain.registry.has_key(acct.public_key):
                    dust.append({"address": address, "reason": "missing_key"})
                    continue
                for token in sorted(t for t, v in acct.tokens.items() if v):
                    if acct.native - chain._pending_native_spend(address) < fee:
                        break
                    tx = chain.make_tx(
                        acct.public_key, collector, "transfer_token",
                        {"token": token, "amount": acct.tokens[token]},
                    )
                    chain.submit_or_raise(tx, operator_pass=True)
                    sweep_txs.append(tx.tx_id)
                spendable = (
                    acct.native - chain._pending_native_spend(address) - fee
                )
                if spendable > 0:
                    tx = chain.make_tx(
                        acct.public_key, collector, "transfer_native", {"amount": spendable}
                    )
                    chain.submit_or_raise(tx, operator_pass=True)
                    sweep_txs.append(tx.tx_id)
                    swept += spendable
                    swept_by_member[address] = spendable
                elif acct.native or any(acct.tokens.values()):
                    dust.append({"address": address, "reason": "below_fee_floor"})
            entry["collector"] = collector
            entry["swept_native"] = swept
            entry["swept_by_member"] = swept_by_member
        report_groups[gid] = entry

    if mode == "on_chain":
        while chain.mempool:
            chain.produce_block()
        for gid, entry in report_groups.items():
            entry["collector_native"] = chain.balance(entry["collector"])
            collector_acct = chain.state.accounts.get(entry["collector"])
            entry["collector_tokens"] = (
                dict(sorted(collector_acct.tokens.items())) if collector_acct else {}
            )

    return {
        "kind": "aggregation",
        "mode": mode,
        "chain_id": chain.chain_id,
        "at_block": chain.head,
        "universe": universe,
        "groups": report_groups,
        "sweep_txs": sweep_txs,
        "dust": dust,
    }


def disaggregate_balances(
    target: ChainInstance,
    record: dict,
    snapshot: dict | None = None,
    holder_pubkey: str | None = None,
    mapping: "MappingTable | None" = None,
) -> dict:
    """Split aggregated value back into per-account balances on the target.

    Each group's pooled value is paid out from its holder account: the
    explicit `holder_pubkey` if given, else the group collector's key
    (recreated from its deterministic label).  The per-member vector
    comes from the aggregation record's contribution list, which must
    still sum to the recorded totals.
    """
    txs = []
    restored: dict[str, dict] = {}
    fee = target.config.tx_fee
    fee_total = 0

    for gid in sorted(record.get("groups", {})):
        entry = record["groups"][gid]
        contributions = entry.get("contributions", {})
        if sum(c["native"] for c in contributions.values()) != entry["native_total"]:
            raise OperationError(
                "record_mismatch", f"group {gid} contributions do not sum to its total"
            )
        token_sums: dict[str, int] = {}
        for c in contributions.values():
            for token, value in c["tokens"].items():
                token_sums[token] = token_sums.get(token, 0) + value
        if token_sums != entry.get("token_totals", {}):
            raise OperationError(
                "record_mismatch", f"group {gid} token contributions do not sum up"
            )

        if holder_pubkey is not None:
            payer = holder_pubkey
        else:
            payer = target.registry.create_key_from_label(
                f"aggregate:{record['chain_id']}:{gid}"
            )

        for member in sorted(contributions, key=bytes.fromhex):
            contribution = contributions[member]
            destination = member
            if mapping is not None:
                destination = mapping.translate(member)
            elif snapshot is not None:
                pk = snapshot.get("accounts", {}).get(member, {}).get("public_key")
                if pk and target.registry.has_key(pk):
                    destination = target.address_for(pk)
            for token, value in sorted(contribution["tokens"].items()):
                tx = target.make_tx(
                    payer, destination, "transfer_token", {"token": token, "amount": value}
                )
                target.submit_or_raise(tx, operator_pass=True)
                txs.append(tx.tx_id)
                fee_total += tx.fee_offered
            if contribution["native"]:
                tx = target.make_tx(
                    payer, destination, "transfer_native", {"amount": contribution["native"]}
                )
                target.submit_or_raise(tx, operator_pass=True)
                txs.append(tx.tx_id)
                fee_total += tx.fee_offered
            restored[destination] = contribution
            if len(target.mempool) >= target.config.block_capacity:
                target.produce_block()

    while target.mempool:
        target.produce_block()
    return {
        "kind": "disaggregation",
        "chain_id": target.chain_id,
        "at_block": target.head,
        "txs": txs,
        "restored": restored,
        "fee_total": fee_total,
        "fee_per_tx": fee,
    }


def burn_scope(chain: ChainInstance, scope="all") -> dict:
    """Retire in-scope holdings into the burn sink.

    Every keyed account burns its token balances and then its native
    balance (`amount="all"` leaves exactly the fee, which the burn tx
    consumes).  Accounts that cannot cover a single fee are recorded as
    below the floor: unusable rather than burned.  Contracts are
    self-destructed by their owner when that key is at hand, else
    terminated via their own switch, else reported unburnable.
    """
    in_scope = _scope_set(chain, scope)
    fee = chain.config.tx_fee
    sink = burn_sink(chain.config.id_scheme)
    burned = []
    unburned = []
    burn_txs = []
    contract_outcomes = {}

    for address in sorted(in_scope, key=bytes.fromhex):
        if address in chain.state.contracts:
            continue
        acct = chain.state.accounts.get(address)
        if acct is None:
            continue
        held_tokens = sorted(t for t, v in acct.tokens.items() if v)
        if acct.native == 0 and not held_tokens:
            continue
        if acct.public_key is None or not chain.registry.has_key(acct.public_key):
            unburned.append(
                {
                    "address": address,
                    "reason": "missing_key",
                    "native_left": acct.native,
                    "tokens_left": dict(sorted(acct.tokens.items())),
                }
            )
            continue
        stalled = False
        for token in held_tokens:
            if acct.native - chain._pending_native_spend(address) < fee:
                stalled = True
                break
            tx = chain.make_tx(
                acct.public_key, sink, "burn", {"asset": token, "amount": "all"}
            )
            chain.submit_or_raise(tx, operator_pass=True)
            burn_txs.append(tx.tx_id)
        if not stalled and acct.native - chain._pending_native_spend(address) >= fee:
            tx = chain.make_tx(
                acct.public_key, sink, "burn", {"asset": "native", "amount": "all"}
            )
            chain.submit_or_raise(tx, operator_pass=True)
            burn_txs.append(tx.tx_id)
            burned.append(address)
        else:
            unburned.append(
                {
                    "address": address,
                    "reason": "below_fee_floor",
                    "native_left": acct.native - chain._pending_native_spend(address),
                    "tokens_left": dict(sorted(acct.tokens.items())),
                }
            )

    import chainmig.contracts as vm

    for address in sorted(in_scope, key=bytes.fromhex):
        deployed = chain.state.contracts.get(address)
        if deployed is None:
            continue
        cstate = chain.state.contract_states[address]
        if cstate.status != vm.STATUS_ACTIVE:
            contract_outcomes[address] = "already_inert"
            continue
        owner_acct = chain.state.accounts.get(deployed.owner)
        owner_key = owner_acct.public_key if owner_acct else None
        if owner_key and chain.registry.has_key(owner_key):
            try:
                chain.self_destruct_contract(address, owner_key, operator_pass=True)
                contract_outcomes[address] = "self_destructed"
            except OperationError:
                contract_outcomes[address] = "unburnable_contract"
        elif "terminate" in deployed.code.entrypoints:
            contract_outcomes[address] = "unburnable_contract"
        else:
            contract_outcomes[address] = "unburnable_contract"
        residual = chain.balance(address)
        if residual and contract_outcomes[address] == "self_destructed":
            contract_outcomes[address] = "self_destructed:locked_native"

    while chain.mempool:
        chain.produce_block()

    for address in burned:
        if chain.balance(address) != 0:
            raise OperationError(
                "burn_incomplete", f"{address} still holds native after burning"
            )

    return {
        "kind": "burn_report",
        "chain_id": chain.chain_id,
        "at_block": chain.head,
        "burned": burned,
        "unburned": unburned,
        "contracts": dict(sorted(contract_outcomes.items())),
        "burn_txs": burn_txs,
        "burn_sink_native": chain.balance(sink),
    }


@dataclass(frozen=True)
class MappingEntry:
    ref: str
    kind: str  # account | contract | token | tx | group
    source_id: str
    target_id: str
    note: str = ""

    def record(self) -> dict:
        return {
            "ref": self.ref,
            "kind": self.kind,
            "source_id": self.source_id,
            "target_id": self.target_id,
            "note": self.note,
        }


@dataclass
class MappingTable:
    """Source-to-target identifier bindings kept by the migration tool.

    Applications keep resolving their old references through this table
    after cut-over; anchoring its digest lets anyone audit that the
    table they hold is the table that was published.
    """

    entries: list[MappingEntry] = field(default_factory=list)

    def add(self, ref: str, kind: str, source_id: str, target_id: str, note: str = "") -> MappingEntry:
        if self.by_ref(ref) is not None:
            raise OperationError("duplicate_ref", f"ref {ref!r} is already bound")
        entry = MappingEntry(ref=ref, kind=kind, source_id=source_id, target_id=target_id, note=note)
        self.entries.append(entry)
        return entry

    def by_ref(self, ref: str) -> MappingEntry | None:
        for entry in self.entries:
            if entry.ref == ref:
                return entry
        return None

    def by_source(self, source_id: str) -> MappingEntry | None:
        for entry in self.entries:
            if entry.source_id == source_id:
                return entry
        return None

    def translate(self, source_id: str) -> str:
        entry = self.by_source(source_id)
        return entry.target_id if entry is not None else source_id

    def to_doc(self) -> dict:
        return {
            "schema_version": 1,
            "kind": "mapping_table",
            "entries": [e.record() for e in sorted(self.entries, key=lambda e: e.ref)],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "MappingTable":
        table = cls()
        for rec in doc.get("entries", []):
            table.entries.append(MappingEntry(**rec))
        return table

    def digest(self) -> str:
        return hexdigest(canonical_json(self.to_doc()))

    def anchor(self, chain: ChainInstance, owner_pubkey: str, store: PoEStore) -> dict:
        doc = self.to_doc()
        digest = store.put(doc)
        tx_id = anchor_digest(chain, owner_pubkey, digest, note="mapping_table")
        return {"digest": digest, "tx_id": tx_id, "entries": len(self.entries)}


def update_mapping(
    table: MappingTable,
    new_ids: list[dict],
    anchor_on: ChainInstance | None = None,
    owner_pubkey: str | None = None,
    store: PoEStore | None = None,
) -> MappingTable:
    """Bind freshly minted target ids into the table.

    Each item carries source_id and target_id; an existing entry for the
    source is rebound, otherwise the item must bring ref and kind for a
    fresh row.  When a chain, key, and store are given the updated
    table's digest is anchored on that chain.
    """
    for item in new_ids:
        source_id = item["source_id"]
        existing = table.by_source(source_id)
        if existing is not None:
            updated = MappingEntry(
                ref=existing.ref,
                kind=existing.kind,
                source_id=source_id,
                target_id=item["target_id"],
                note=item.get("note", existing.note),
            )
            table.entries[table.entries.index(existing)] = updated
        elif "ref" in item and "kind" in item:
            table.add(item["ref"], item["kind"], source_id, item["target_id"], item.get("note", ""))
        else:
            raise OperationError(
                "unknown_source_id", f"{source_id[:12]} has no entry and no ref/kind to add one"
            )
    if anchor_on is not None and owner_pubkey is not None and store is not None:
        table.anchor(anchor_on, owner_pubkey, store)
    return table
