"""Load-side moves: stand up or extend the target chain.

Four ways to get captured state onto a target, in decreasing order of
control required: write it into a fresh genesis block, inject it with a
hard fork, replay it in as ordinary transactions from a funding account,
or sync a node byte-for-byte.  `announce_soft_fork` is the rule-only
sibling of the hard fork: old nodes keep following the chain.
"""

from __future__ import annotations

import json

from ..canonical import canonical_json
from ..errors import OperationError
from ..ledger import (
    ChainConfig,
    ChainInstance,
    KeyRegistry,
    NodeReplica,
    block_from_record,
    compatible_platforms,
    contract_address,
    derive_address,
    replay_blocks,
    state_from_doc,
)
from .capture import MappingTable


def _resolve_owner(
    public_key: str | None,
    source_address: str,
    target_scheme: str,
    registry: KeyRegistry | None,
    external_policy: str,
) -> tuple[str, str | None, str]:
    """(target_address, target_public_key, disposition) for one account.

    Accounts whose key the operator holds keep their identity.  The
    rest are external: `stand_in` parks their assets in an operator
    custody account derived from a stable label (replay makes the same
    derivation, so the two stages always agree); `carry` keeps the
    original identifier, keyless on the target.
    """
    if public_key and (registry is None or registry.has_key(public_key)):
        return derive_address(public_key, target_scheme), public_key, "keyed"
    if external_policy == "stand_in" and registry is not None:
        stand_key = registry.create_key_from_label(f"standin:{source_address}")
        return derive_address(stand_key, target_scheme), stand_key, "stand_in"
    return source_address, None, "carry"


def establish_genesis(
    snapshot: dict,
    config: ChainConfig,
    registry: KeyRegistry,
    mapping: MappingTable | None = None,
    external_policy: str = "stand_in",
) -> tuple[ChainInstance, dict]:
    """Write snapshot state into the genesis block of a brand-new chain.

    Only works when the operator controls genesis (never on baas) and
    when everything fits the genesis block's entry budget; oversized
    captures must fall back to state initialization.
    """
    if not config.allows_genesis_control:
        raise OperationError(
            "genesis_control_denied", f"{config.chain_id} does not grant genesis control"
        )
    accounts = snapshot.get("accounts", {})
    contracts = snapshot.get("contracts", {})
    entries = len(accounts) + len(contracts)
    if entries > config.block_capacity:
        raise OperationError(
            "genesis_overflow",
            f"{entries} genesis entries exceed the block budget {config.block_capacity}",
        )

    def resolve(source_address: str) -> tuple[str, str | None, str]:
        rec = accounts.get(source_address, {})
        return _resolve_owner(
            rec.get("public_key") or None,
            source_address,
            config.id_scheme,
            registry,
            external_policy,
        )

    allocations = {}
    for source_address, rec in accounts.items():
        if source_address in contracts:
            target_address, target_key = source_address, None
        else:
            target_address, target_key, disposition = resolve(source_address)
            if mapping is not None and mapping.by_source(source_address) is None:
                mapping.add(
                    f"account:{source_address}", "account",
                    source_address, target_address, disposition,
                )
        alloc = {"native": rec.get("native", 0), "tokens": dict(rec.get("tokens", {}))}
        if target_key:
            alloc["public_key"] = target_key
        allocations[target_address] = alloc

    genesis_contracts = {}
    for source_address, code_rec in contracts.items():
        if code_rec["dialect"] not in _executable(config.vm_dialect):
            raise OperationError(
                "dialect_mismatch",
                f"contract {source_address[:12]} speaks {code_rec['dialect']}",
            )
        state_rec = snapshot.get("contract_states", {}).get(source_address, {})
        genesis_contracts[source_address] = {
            "dialect": code_rec["dialect"],
            "bytecode": code_rec["bytecode"],
            "source": code_rec.get("source"),
            "entrypoints": code_rec.get("entrypoints", {}),
            "entry_arity": code_rec.get("entry_arity", {}),
            "owner": resolve(code_rec.get("owner", ""))[0],
            "storage": state_rec.get("storage", {}),
            "known_keys": state_rec.get("known_keys", []),
            "status": state_rec.get("status", "active"),
        }

    doc = {
        "schema_version": 1,
        "config": config.to_record(),
        "allocations": allocations,
        "contracts": genesis_contracts,
        "token_issuers": {
            token: resolve(issuer)[0]
            for token, issuer in snapshot.get("token_issuers", {}).items()
        },
    }
    chain = ChainInstance.from_genesis_doc(doc, registry)
    report = {
        "kind": "genesis_report",
        "chain_id": config.chain_id,
        "entries": entries,
        "accounts": len(allocations),
        "contracts": len(genesis_contracts),
        "native_supply": chain.expected_native_supply(),
        "source_snapshot_digest": snapshot.get("digest", ""),
    }
    return chain, report


def _executable(vm_dialect: str) -> tuple[str, ...]:
    import chainmig.contracts as vm

    return vm.executable_dialects(vm_dialect)


def hard_fork(
    chain: ChainInstance, snapshot: dict, name: str, at_block: int | None = None
) -> dict:
    """Inject snapshot state into a running chain at a fork block.

    The injected records ride inside the block, so replicas that replay
    the chain reproduce them; replicas that refuse the new rules are
    ejected from the node set.  `at_block` schedules the fork past the
    current head (default: the very next block).
    """
    if not chain.config.allows_hard_fork:
        raise OperationError("fork_not_permitted", f"{chain.chain_id} does not accept forks")
    if at_block is None:
        at_block = chain.head + 1
    if at_block <= chain.head:
        raise OperationError("block_in_past", f"head is already {chain.head}")
    while chain.head < at_block - 1:
        chain.produce_block()
    records = []
    for address, rec in snapshot.get("accounts", {}).items():
        record = {
            "address": address,
            "public_key": rec.get("public_key") or None,
            "native": rec.get("native", 0),
            "tokens": dict(rec.get("tokens", {})),
        }
        code_rec = snapshot.get("contracts", {}).get(address)
        if code_rec is not None:
            if code_rec["dialect"] not in _executable(chain.config.vm_dialect):
                raise OperationError(
                    "dialect_mismatch", f"contract {address[:12]} cannot run here"
                )
            state_rec = snapshot.get("contract_states", {}).get(address, {})
            record["contract"] = {
                "dialect": code_rec["dialect"],
                "bytecode": code_rec["bytecode"],
                "source": code_rec.get("source"),
                "entrypoints": code_rec.get("entrypoints", {}),
                "entry_arity": code_rec.get("entry_arity", {}),
                "owner": code_rec.get("owner", address),
                "storage": state_rec.get("storage", {}),
                "known_keys": state_rec.get("known_keys", []),
                "status": state_rec.get("status", "active"),
            }
        records.append(record)
    injected_native = sum(r["native"] for r in records)
    block = chain.inject_states(records, annotation=f"hard_fork:{name}")
    ejected = []
    for node_id in sorted(chain.nodes):
        if not chain.nodes[node_id].carries_update:
            ejected.append(node_id)
            del chain.nodes[node_id]
    return {
        "kind": "fork_report",
        "chain_id": chain.chain_id,
        "name": name,
        "block": block.number,
        "annotation": block.annotation,
        "injected_accounts": len(records),
        "injected_native": injected_native,
        "supply_after": chain.expected_native_supply(),
        "ejected_nodes": ejected,
        "source_snapshot_digest": snapshot.get("digest", ""),
    }


def announce_soft_fork(chain: ChainInstance, name: str) -> dict:
    """Tighten rules with a marker block; old nodes stay on the chain."""
    block = chain.append_marker_block(f"soft_fork:{name}")
    return {
        "kind": "soft_fork_report",
        "chain_id": chain.chain_id,
        "name": name,
        "block": block.number,
        "annotation": block.annotation,
        "nodes_kept": sorted(chain.nodes),
    }


def state_initialization(
    target: ChainInstance,
    snapshot: dict,
    funder_pubkey: str,
    mapping: MappingTable | None = None,
    native_scope: str = "reject",
    external_policy: str = "stand_in",
) -> dict:
    """Rebuild snapshot state through ordinary transactions.

    Works on any chain the funder can transact on, including baas
    targets, at the cost of fees and fresh identifiers.  The native
    asset is the sticking point: it cannot be carried, only re-funded
    from the funder's own balance (`native_scope="fund"`), skipped
    (`"skip"`), or treated as a planning error (`"reject"`).
    """
    if native_scope not in ("reject", "skip", "fund"):
        raise OperationError("bad_mode", f"unknown native_scope {native_scope!r}")
    accounts = snapshot.get("accounts", {})
    contracts = snapshot.get("contracts", {})
    scheme = target.config.id_scheme
    funder = target.address_for(funder_pubkey)

    native_in_scope = sum(
        rec.get("native", 0) for addr, rec in accounts.items() if addr not in contracts
    )
    if native_scope == "reject" and native_in_scope:
        raise OperationError(
            "native_asset_in_scope",
            f"{native_in_scope} native units cannot be initialized by transaction",
        )

    planned_txs = 0
    for addr, rec in accounts.items():
        if addr in contracts:
            continue
        if rec.get("public_key") or external_policy == "stand_in":
            planned_txs += 1
        planned_txs += sum(1 for v in rec.get("tokens", {}).values() if v)
        if rec.get("native", 0) and native_scope == "fund":
            planned_txs += 1
    planned_txs += len(contracts)
    planned_cost = target.config.tx_fee * planned_txs
    if native_scope == "fund":
        planned_cost += native_in_scope
    if target.balance(funder) < planned_cost:
        raise OperationError(
            "insufficient_fee_funds",
            f"funder holds {target.balance(funder)} of the {planned_cost} required",
        )

    created = []
    minted = []
    funded = []
    deployed = {}
    skipped = []
    tx_ids = []

    def _push(tx):
        target.submit_or_raise(tx, operator_pass=True)
        tx_ids.append(tx.tx_id)
        if len(target.mempool) >= target.config.block_capacity:
            target.produce_block()

    for source_address in sorted(accounts, key=bytes.fromhex):
        if source_address in contracts:
            continue
        rec = accounts[source_address]
        target_address, target_key, disposition = _resolve_owner(
            rec.get("public_key") or None,
            source_address,
            scheme,
            target.registry,
            external_policy,
        )
        if target_key:
            _push(
                target.make_tx(
                    funder_pubkey, target_address, "create_account", {"public_key": target_key}
                )
            )
            created.append(target_address)
        if mapping is not None and mapping.by_source(source_address) is None:
            mapping.add(
                f"account:{source_address}", "account", source_address, target_address, disposition
            )
        for token, value in sorted(rec.get("tokens", {}).items()):
            if not value:
                continue
            _push(
                target.make_tx(
                    funder_pubkey,
                    target_address,
                    "transfer_token",
                    {"token": token, "amount": value, "mint": True},
                )
            )
            minted.append({"address": target_address, "token": token, "amount": value})
        native = rec.get("native", 0)
        if native:
            if native_scope == "fund":
                _push(
                    target.make_tx(
                        funder_pubkey, target_address, "transfer_native", {"amount": native}
                    )
                )
                funded.append({"address": target_address, "amount": native})
            else:
                skipped.append({"address": source_address, "native": native, "reason": "native_scope_skip"})

    for source_address in sorted(contracts, key=bytes.fromhex):
        code_rec = contracts[source_address]
        if code_rec["dialect"] not in _executable(target.config.vm_dialect):
            raise OperationError(
                "dialect_mismatch", f"contract {source_address[:12]} cannot run here"
            )
        state_rec = snapshot.get("contract_states", {}).get(source_address, {})
        stored = {k: v for k, v in state_rec.get("storage", {}).items() if v}
        logical = state_rec.get("logical", {})
        if len(logical) < len(stored):
            raise OperationError(
                "storage_opaque",
                f"contract {source_address[:12]} has slots with no logical key",
            )
        nonce = target.next_nonce(funder)
        tx = target.make_tx(
            funder_pubkey,
            funder,
            "deploy_contract",
            {
                "dialect": code_rec["dialect"],
                "bytecode": code_rec["bytecode"],
                "source": code_rec.get("source"),
                "entrypoints": code_rec.get("entrypoints", {}),
                "entry_arity": code_rec.get("entry_arity", {}),
                "skip_init": True,
                "storage_logical": logical,
            },
            nonce=nonce,
        )
        target_address = contract_address(funder, nonce, scheme)
        _push(tx)
        deployed[source_address] = target_address
        if mapping is not None:
            mapping.add(
                f"contract:{source_address}", "contract", source_address, target_address,
                "owner_reassigned_to_funder",
            )

    while target.mempool:
        target.produce_block()

    fee_total = target.config.tx_fee * len(tx_ids)
    for item in minted:
        if target.balance(item["address"], item["token"]) < item["amount"]:
            raise OperationError("init_incomplete", f"token mint missing at {item['address'][:12]}")
    for source_address, target_address in deployed.items():
        if target_address not in target.state.contracts:
            raise OperationError("init_incomplete", f"contract {target_address[:12]} not deployed")

    return {
        "kind": "state_init_report",
        "chain_id": target.chain_id,
        "funder": funder,
        "created_accounts": created,
        "minted": minted,
        "funded_native": funded,
        "deployed_contracts": deployed,
        "skipped": skipped,
        "tx_count": len(tx_ids),
        "fee_total": fee_total,
        "tx_ids": tx_ids,
        "source_snapshot_digest": snapshot.get("digest", ""),
    }


def sync_replica(
    chain: ChainInstance,
    node_id: str,
    mode: str = "full",
    transport=None,
    location: str = "",
    node_platform: ChainConfig | None = None,
) -> dict:
    """Bring a node copy up to the chain head.

    `full` ships genesis plus every block and re-executes them all,
    verifying links, roots, and digests; `state_only` ships the current
    state document and trusts the head block's root.  `transport` is a
    bytes-to-bytes hook standing in for the network; anything it
    corrupts must be caught by verification.  A node advertising its own
    platform config must match the chain's platform family.
    """
    if mode not in ("full", "state_only"):
        raise OperationError("bad_mode", f"unknown sync mode {mode!r}")
    if node_platform is not None and not compatible_platforms(chain.config, node_platform):
        raise OperationError(
            "incompatible_platform", f"node {node_id} cannot join {chain.chain_id}"
        )
    node = chain.nodes.get(node_id)
    if node is None:
        node = NodeReplica(node_id=node_id, location=location)
        chain.nodes[node_id] = node

    if mode == "full":
        payload = {
            "genesis_doc": chain.genesis_doc,
            "blocks": [block.record() for block in chain.blocks],
        }
    else:
        payload = {
            "state_doc": chain.export_state_doc(include_blocks=False),
            "head": chain.head,
            "head_root": chain.blocks[-1].state_root,
        }
    raw = canonical_json(payload)
    if transport is not None:
        raw = transport(raw)
    try:
        received = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise OperationError("verification_failed", "transport payload unreadable") from None

    if mode == "full":
        blocks = [block_from_record(rec) for rec in received["blocks"]]
        replica = replay_blocks(received["genesis_doc"], chain.registry, blocks)
        node.local_blocks = list(replica.blocks)
        node.local_state = replica.state
        node.synced_up_to = replica.head
        verified = "replayed"
        block_count = len(blocks)
    else:
        state = state_from_doc(received["state_doc"])
        if state.digest() != received["head_root"]:
            raise OperationError("verification_failed", "state does not match the claimed root")
        node.local_state = state
        node.synced_up_to = received["head"]
        verified = "root_only"
        block_count = 0

    return {
        "kind": "sync_report",
        "chain_id": chain.chain_id,
        "node_id": node_id,
        "mode": mode,
        "synced_up_to": node.synced_up_to,
        "verified": verified,
        "blocks_shipped": block_count,
    }


def clone_chain(source: ChainInstance, registry: KeyRegistry | None = None) -> ChainInstance:
    """Fresh deployment of the same network: replay every block from
    genesis under full verification.  The clone keeps the chain id, so
    all historical signatures remain valid."""
    return replay_blocks(source.genesis_doc, registry or source.registry, source.blocks)
