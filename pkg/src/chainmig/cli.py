"""Batch driver for migration plans.

Three entrypoints over the same plan document:

* ``run``      executes the pipeline and writes a self-verifying bundle,
* ``dry-run``  prints exact per-stage transaction and fee estimates
               without touching a target chain,
* ``verify``   re-derives every digest in a bundle and replays the
               enclosed chain dumps from genesis.

Plan documents are JSON.  Account-valued parameters accept role paths
(``role:organizer``, ``role:holder:0``, ``role:budget:venue``) that are
resolved against the scenario world built by ``source_build``.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import fixtures, workloads
from . import contracts as vm
from .canonical import SCHEMA_VERSION, canonical_json, hexdigest, load_json
from .errors import OperationError, PlanValidationError
from .exchange import ExchangeDesk, as_fraction
from .ledger import (
    ChainConfig,
    ChainInstance,
    KeyRegistry,
    block_from_record,
    fee_sink,
    replay_blocks,
)
from .patterns import (
    MappingTable,
    PoEStore,
    aggregate_balances,
    anchor_digest,
    burn_scope,
    clone_chain,
    derive_sealing_key,
    establish_genesis,
    exchange_transfer_scope,
    hard_fork,
    partition_by_account_prefix,
    partition_by_node_location,
    partition_by_tx_affinity,
    replay_transactions,
    seal_and_anchor,
    shard_chain,
    state_initialization,
    sync_replica,
    take_snapshot,
    translate_contract,
)
from .patterns.capture import verify_snapshot
from .patterns.shard import cross_shard_count
from .planner import (
    MigrationPlan,
    PlanStep,
    estimate_cost,
    estimate_latency,
    measure_quality,
    suggest_pipeline,
    validate_plan,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_STAGE_FAILED = 3
EXIT_VERIFY_FAILED = 4

_PLAN_DEFAULTS = {
    "privacy": False,
    "decommission_source": False,
    "target_is_new": True,
    "large_artifacts": False,
    "fee_allowance": 0,
    "seed": 0,
}


# -- plan documents --------------------------------------------------------


def load_plan_doc(path: str | Path) -> dict:
    try:
        doc = load_json(Path(path).read_bytes())
    except (OSError, ValueError) as exc:
        raise OperationError("parse_error", f"cannot read plan {path}: {exc}")
    if not isinstance(doc, dict):
        raise OperationError("parse_error", "plan document must be a JSON object")
    return doc


def normalize_plan_doc(doc: dict, seed: int | None = None) -> dict:
    """Fill defaults and resolve ``"pipeline": "auto"`` to concrete steps.

    The result is the exact document the bundle records; running it
    again reproduces the run byte for byte.
    """
    for key in ("scenarios", "fidelity", "source", "target"):
        if key not in doc:
            raise OperationError("parse_error", f"plan is missing {key!r}")
    out = dict(doc)
    out.setdefault("schema_version", SCHEMA_VERSION)
    out.setdefault("name", "migration")
    for key, value in _PLAN_DEFAULTS.items():
        out.setdefault(key, value)
    if seed is not None:
        out["seed"] = seed
    out.setdefault("source_build", {"fixture": "transfers", "params": {}})
    source = ChainConfig.from_record(out["source"])
    target = ChainConfig.from_record(out["target"])
    pipeline = out.get("pipeline", "auto")
    if pipeline == "auto":
        options = suggest_pipeline(
            tuple(out["scenarios"]),
            out["fidelity"],
            source,
            target,
            target_is_new=out["target_is_new"],
            privacy=out["privacy"],
            decommission_source=out["decommission_source"],
            large_artifacts=out["large_artifacts"],
        )
        pipeline = [{"pattern": name, "params": {}} for name in options[0]["pipeline"]]
    steps = []
    for step in pipeline:
        if isinstance(step, str):
            steps.append({"pattern": step, "params": {}})
        elif isinstance(step, dict) and "pattern" in step:
            steps.append({"pattern": step["pattern"], "params": step.get("params") or {}})
        else:
            raise OperationError("parse_error", f"malformed pipeline step {step!r}")
    out["pipeline"] = steps
    return out


def plan_from_doc(doc: dict) -> MigrationPlan:
    return MigrationPlan(
        scenarios=tuple(doc["scenarios"]),
        fidelity=doc["fidelity"],
        source=ChainConfig.from_record(doc["source"]),
        target=ChainConfig.from_record(doc["target"]),
        pipeline=tuple(
            PlanStep(step["pattern"], dict(step.get("params") or {}))
            for step in doc["pipeline"]
        ),
        privacy=doc["privacy"],
        decommission_source=doc["decommission_source"],
        target_is_new=doc["target_is_new"],
        large_artifacts=doc["large_artifacts"],
    )


# -- scenario worlds -------------------------------------------------------


def build_source(doc: dict, seed: int) -> tuple[ChainInstance, KeyRegistry, dict]:
    """Materialize the source chain named by ``source_build``.

    Returns the chain, its key registry, and a role directory used to
    resolve ``role:`` parameters and to pick the default anchor owner.
    """
    cfg = ChainConfig.from_record(doc["source"])
    build = doc.get("source_build") or {}
    kind = build.get("fixture", "transfers")
    params = build.get("params") or {}
    if kind == "concert":
        fx = fixtures.concert_fixture(
            seed=seed,
            config=cfg,
            buyer_count=params.get("buyers", 5),
            external_count=params.get("externals", 2),
        )
        chain, registry = fx.chain, fx.registry
        info = {
            "roles": {
                "organizer": chain.address_for(fx.organizer),
                "budget": {k: chain.address_for(pk) for k, pk in fx.budget.items()},
                "holder": [chain.address_for(pk) for pk in fx.buyers],
                "external": list(fx.externals),
                "contract": {"funding": fx.funding_contract, "pledge": fx.pledge_contract},
            },
            "owner_keys": {"organizer": fx.organizer},
            "default_owner": fx.organizer,
            "build": {"fixture": kind, "token": fx.token},
        }
        return chain, registry, info
    if kind not in ("transfers", "mixed", "clustered"):
        raise OperationError("parse_error", f"unknown source fixture {kind!r}")
    holders = params.get("holders", 24 if kind == "clustered" else 8)
    chain, registry, keys = workloads.fresh_chain(
        cfg.chain_id,
        holder_count=holders,
        endowment=params.get("endowment", 500),
        config=cfg,
    )
    build_report: dict = {"fixture": kind}
    roles: dict = {"holder": [chain.address_for(k) for k in keys]}
    if kind == "transfers":
        workloads.transfer_workload(chain, keys, seed, tx_count=params.get("txs", 30))
    elif kind == "mixed":
        outcome = workloads.mixed_workload(chain, keys, seed, tx_count=params.get("txs", 30))
        build_report.update(outcome)
        if outcome.get("contract"):
            roles["contract"] = {"token": outcome["contract"]}
    else:
        membership = workloads.clustered_workload(
            chain,
            keys,
            seed,
            clique_count=params.get("cliques", 4),
            tx_count=params.get("txs", 120),
        )
        build_report["cliques"] = membership
    info = {
        "roles": roles,
        "owner_keys": {"holder0": keys[0]},
        "default_owner": keys[0],
        "build": build_report,
    }
    return chain, registry, info


def resolve_account(spec, info: dict):
    """Resolve a ``role:`` path to an address; anything else passes through."""
    if not isinstance(spec, str) or not spec.startswith("role:"):
        return spec
    node = info.get("roles", {})
    for part in spec.split(":")[1:]:
        if isinstance(node, dict):
            if part not in node:
                raise OperationError("unknown_role", f"no role {spec!r} in this world")
            node = node[part]
        elif isinstance(node, (list, tuple)):
            try:
                node = node[int(part)]
            except (ValueError, IndexError):
                raise OperationError("unknown_role", f"no role {spec!r} in this world")
        else:
            raise OperationError("unknown_role", f"role path {spec!r} goes past a leaf")
    if not isinstance(node, str):
        raise OperationError("unknown_role", f"{spec!r} names a group, not one account")
    return node


def _owner_key(params: dict, info: dict) -> str:
    spec = params.get("owner")
    if spec is None:
        return info["default_owner"]
    if isinstance(spec, str) and spec.startswith("role:"):
        name = spec.split(":", 1)[1]
        keys = info.get("owner_keys", {})
        if name not in keys:
            raise OperationError("unknown_role", f"no signing key for {spec!r}")
        return keys[name]
    return spec


def _scope_arg(params: dict, info: dict):
    scope = params.get("scope", "all")
    if scope == "all":
        return "all"
    return sorted(resolve_account(s, info) for s in scope)


# -- run context -----------------------------------------------------------


@dataclass
class RunContext:
    plan: MigrationPlan
    doc: dict
    seed: int
    source: ChainInstance
    registry: KeyRegistry
    info: dict
    poe: PoEStore
    mapping: MappingTable = field(default_factory=MappingTable)
    target: ChainInstance | None = None
    shards: list[ChainInstance] = field(default_factory=list)
    snapshot: dict | None = None
    initial_state: dict | None = None
    desk: ExchangeDesk | None = None
    stage_reports: list[dict] = field(default_factory=list)
    target_start_head: int = 0
    fee_start: dict[str, int] = field(default_factory=dict)
    quality: dict | None = None

    def chains(self) -> dict[str, ChainInstance]:
        out = {"source": self.source}
        if self.target is not None:
            out["target"] = self.target
        for i, shard in enumerate(self.shards):
            out[f"shard_{i}"] = shard
        return out

    def note_chain(self, role: str, chain: ChainInstance) -> None:
        self.fee_start[role] = chain.balance(fee_sink(chain.config.id_scheme))

    def adopt_target(self, chain: ChainInstance) -> None:
        self.target = chain
        self.target_start_head = chain.head
        self.note_chain("target", chain)

    def anchor_chain(self) -> ChainInstance:
        return self.target if self.target is not None else self.source

    def replay_planned(self) -> bool:
        return "transaction_replay" in self.plan.patterns()

    def load_basis(self) -> dict:
        if self.snapshot is None:
            raise OperationError("missing_snapshot", "no snapshot taken before this stage")
        if self.replay_planned():
            if self.initial_state is None:
                raise OperationError(
                    "missing_snapshot",
                    "replay needs a genesis-mode snapshot to seed initial state",
                )
            return self.initial_state
        return self.snapshot


def initial_state_doc(snapshot: dict) -> dict:
    """Rewrite a genesis-mode snapshot as a load basis at block zero.

    Pipelines that replay history must seed the target with the state
    *before* the captured transactions; loading the final state and then
    replaying would apply every effect twice.
    """
    genesis = snapshot.get("genesis_doc")
    if genesis is None:
        raise OperationError("missing_snapshot", "snapshot has no genesis document")
    accounts = {}
    for address, spec in genesis.get("allocations", {}).items():
        accounts[address] = {
            "public_key": spec.get("public_key"),
            "native": spec.get("native", 0),
            "tokens": dict(spec.get("tokens", {})),
        }
    contracts = {}
    contract_states = {}
    for address, spec in genesis.get("contracts", {}).items():
        contracts[address] = {
            "dialect": spec["dialect"],
            "bytecode": spec["bytecode"],
            "source": spec.get("source"),
            "entrypoints": spec.get("entrypoints", {}),
            "entry_arity": spec.get("entry_arity", {}),
        }
        contract_states[address] = {
            "storage": {},
            "logical": dict(spec.get("storage_logical", {})),
            "status": spec.get("status", vm.STATUS_ACTIVE),
        }
    return {
        "schema_version": snapshot.get("schema_version", SCHEMA_VERSION),
        "kind": "snapshot",
        "mode": "initial",
        "source_chain_id": snapshot["source_chain_id"],
        "source_config": snapshot["source_config"],
        "taken_at_block": 0,
        "scope": snapshot.get("scope", "all"),
        "accounts": accounts,
        "contracts": contracts,
        "contract_states": contract_states,
        "token_issuers": dict(genesis.get("token_issuers", {})),
        "captured_txs": [],
        "digest": snapshot.get("digest", ""),
    }


# -- stage executors -------------------------------------------------------


def _stage_snapshotting(ctx: RunContext, params: dict) -> dict:
    mode = params.get("mode")
    if mode is None:
        mode = "genesis" if ctx.replay_planned() or ctx.plan.fidelity == "full_history" else "current"
    snapshot = take_snapshot(
        ctx.source,
        scope=_scope_arg(params, ctx.info),
        mode=mode,
        grace_blocks=params.get("grace_blocks", 1),
        freeze_chain=params.get("freeze", True),
    )
    ctx.snapshot = snapshot
    if mode == "genesis":
        ctx.initial_state = initial_state_doc(snapshot)
    return snapshot


def _stage_state_aggregation(ctx: RunContext, params: dict) -> dict:
    groups = params.get("groups")
    if not groups:
        raise OperationError("empty_group", "state_aggregation needs a groups parameter")
    resolved = {
        gid: [resolve_account(m, ctx.info) for m in members]
        for gid, members in groups.items()
    }
    record = aggregate_balances(ctx.source, resolved, mode=params.get("mode", "off_chain"))
    ctx.info["aggregation"] = record
    ctx.poe.put(record)
    return record


def _stage_establish_genesis(ctx: RunContext, params: dict) -> dict:
    basis = ctx.load_basis()
    chain, report = establish_genesis(
        basis,
        ctx.plan.target,
        ctx.registry,
        mapping=ctx.mapping,
        external_policy=params.get("external_policy", "stand_in"),
    )
    ctx.adopt_target(chain)
    return report


def _stage_state_initialization(ctx: RunContext, params: dict) -> dict:
    basis = ctx.load_basis()
    native_scope = params.get("native_scope", "fund")
    if ctx.target is None:
        funder = ctx.registry.create_key_from_label("migration:funder")
        endowment = params.get("funder_endowment")
        if endowment is None:
            txs, _, native = mirror_state_init(
                basis, ctx.plan.target, native_scope, params.get("external_policy", "stand_in")
            )
            endowment = ctx.plan.target.tx_fee * txs + native
        chain = ChainInstance(
            ctx.plan.target,
            ctx.registry,
            workloads.genesis_for(ctx.plan.target, {funder: endowment}),
        )
        ctx.info["funder"] = funder
        ctx.adopt_target(chain)
    funder = ctx.info.get("funder") or _owner_key(params, ctx.info)
    return state_initialization(
        ctx.target,
        basis,
        funder,
        mapping=ctx.mapping,
        native_scope=native_scope,
        external_policy=params.get("external_policy", "stand_in"),
    )


def _stage_hard_fork(ctx: RunContext, params: dict) -> dict:
    basis = ctx.load_basis()
    if ctx.target is None:
        chain = ChainInstance(
            ctx.plan.target, ctx.registry, workloads.genesis_for(ctx.plan.target, {})
        )
        ctx.adopt_target(chain)
    return hard_fork(
        ctx.target,
        basis,
        name=params.get("name", f"migrate-{ctx.source.chain_id}"),
        at_block=params.get("at_block"),
    )


def _stage_node_sync(ctx: RunContext, params: dict) -> dict:
    sync = sync_replica(
        ctx.source,
        node_id=params.get("node_id", "migrated-node"),
        mode=params.get("mode", "full"),
        location=params.get("location", ""),
    )
    clone = clone_chain(ctx.source, ctx.registry)
    ctx.adopt_target(clone)
    return {
        "kind": "node_sync_report",
        "chain_id": clone.chain_id,
        "head": clone.head,
        "state_root": clone.blocks[-1].state_root,
        "sync": sync,
    }


def _stage_exchange_transfer(ctx: RunContext, params: dict) -> dict:
    rate = params.get("rate", 1)
    commission = params.get("commission", 0)
    scope = _scope_arg(params, ctx.info)
    if ctx.snapshot is None:
        # keep a pre-swap extract so quality has something to compare against
        ctx.snapshot = take_snapshot(ctx.source, scope=scope, mode="current", freeze_chain=False)
    desk_label = params.get("desk_label", "exchange-desk")
    if ctx.target is None:
        desk_key = ctx.registry.create_key_from_label(desk_label)
        quotes = mirror_exchange(ctx.source, scope, rate, commission, ctx.registry)
        payout = sum(q["amount_out"] for q in quotes["rows"])
        float_native = payout + ctx.plan.target.tx_fee * (len(quotes["rows"]) + 1) + 1
        holders = {desk_key: float_native}
        for row in quotes["rows"]:
            holders.setdefault(row["public_key"], 0)
        chain = ChainInstance(
            ctx.plan.target,
            ctx.registry,
            workloads.genesis_for(ctx.plan.target, holders),
        )
        ctx.adopt_target(chain)
    desk = ExchangeDesk(ctx.source, ctx.target, ctx.registry, desk_label)
    desk.list_asset(ctx.source.chain_id, "native")
    desk.list_asset(ctx.target.chain_id, "native")
    listing = desk.open_listing(
        params.get("listing_id", "migration"), "native", "native", rate, commission
    )
    report = exchange_transfer_scope(desk, listing.listing_id, scope=scope, mapping=ctx.mapping)
    ctx.desk = desk
    report["custody_source"] = desk.custody_source
    report["custody_target"] = desk.custody_target
    return report


def _stage_transaction_replay(ctx: RunContext, params: dict) -> dict:
    if ctx.target is None:
        raise OperationError("no_target_chain", "replay needs a loaded target chain")
    if ctx.snapshot is None:
        raise OperationError("missing_snapshot", "replay needs a snapshot with captured txs")
    return replay_transactions(
        ctx.target,
        ctx.snapshot,
        ctx.mapping,
        mode=params.get("mode", "exact"),
        order=params.get("order", "grouped"),
        seed=ctx.seed,
        external_policy=params.get("external_policy", "stand_in"),
        fee_policy=params.get("fee_policy", "copy"),
        max_retries=params.get("max_retries", 10),
        poe_store=ctx.poe,
    )


def _stage_token_burning(ctx: RunContext, params: dict) -> dict:
    return burn_scope(ctx.source, scope=_scope_arg(params, ctx.info))


def _stage_mapping_table(ctx: RunContext, params: dict) -> dict:
    chain = ctx.anchor_chain()
    anchor = ctx.mapping.anchor(chain, _owner_key(params, ctx.info), ctx.poe)
    return {
        "kind": "mapping_anchor",
        "chain_id": chain.chain_id,
        "table": ctx.mapping.to_doc(),
        **anchor,
    }


def _stage_sharding(ctx: RunContext, params: dict) -> dict:
    if ctx.snapshot is None:
        ctx.snapshot = take_snapshot(ctx.source, scope="all", mode="current", freeze_chain=False)
    snapshot = ctx.snapshot
    count = params.get("shard_count", 2)
    policy = params.get("policy", "prefix")
    addresses = sorted(snapshot.get("accounts", {}), key=bytes.fromhex)
    if policy == "prefix":
        assignment = partition_by_account_prefix(addresses, count)
    elif policy == "affinity":
        assignment = partition_by_tx_affinity(snapshot.get("captured_txs", []), addresses, count)
    elif policy == "node_location":
        locations = {
            resolve_account(k, ctx.info): v for k, v in params.get("locations", {}).items()
        }
        assignment = partition_by_node_location(addresses, locations, count)
    else:
        raise OperationError("bad_mode", f"unknown shard policy {policy!r}")
    deployment = shard_chain(
        ctx.source,
        snapshot,
        assignment,
        ctx.registry,
        shard_count=count,
        bridge_float=params.get("bridge_float", 0),
        announce=params.get("announce", True),
    )
    ctx.shards = list(deployment.shards)
    for i, shard in enumerate(deployment.shards):
        ctx.note_chain(f"shard_{i}", shard)
    ctx.info["shard_assignment"] = assignment
    report = deployment.report()
    report["policy"] = policy
    report["assignment"] = {a: assignment[a] for a in sorted(assignment, key=bytes.fromhex)}
    report["cross_shard_txs"] = cross_shard_count(snapshot.get("captured_txs", []), assignment)
    return report


def _stage_measure(ctx: RunContext, params: dict) -> dict:
    if ctx.target is None:
        raise OperationError("no_target_chain", "quality needs a target chain to score")
    snapshot = ctx.snapshot
    if snapshot is None:
        snapshot = take_snapshot(ctx.source, scope="all", mode="current", freeze_chain=False)
    report = measure_quality(
        ctx.plan,
        snapshot,
        ctx.source,
        ctx.target,
        mapping=ctx.mapping,
        stage_reports=tuple(ctx.stage_reports),
        fee_allowance=ctx.doc.get("fee_allowance", 0),
        poe_store=ctx.poe,
        start_head=ctx.target_start_head,
    )
    ctx.quality = report
    return report


def _stage_vm_emulation(ctx: RunContext, params: dict) -> dict:
    if ctx.snapshot is None:
        raise OperationError("missing_snapshot", "emulation review needs a snapshot")
    runnable = vm.executable_dialects(ctx.plan.target.vm_dialect)
    rows = []
    for address in sorted(ctx.snapshot.get("contracts", {}), key=bytes.fromhex):
        dialect = ctx.snapshot["contracts"][address]["dialect"]
        if dialect not in runnable:
            raise OperationError(
                "dialect_mismatch",
                f"target engine runs {sorted(runnable)}, contract speaks {dialect!r}",
            )
        rows.append({"address": address, "dialect": dialect})
    return {
        "kind": "vm_emulation_report",
        "target_dialect": ctx.plan.target.vm_dialect,
        "executable": sorted(runnable),
        "contracts": rows,
    }


def _stage_contract_translation(ctx: RunContext, params: dict) -> dict:
    if ctx.snapshot is None:
        raise OperationError("missing_snapshot", "translation needs captured contracts")
    target_dialect = params.get("target_dialect", ctx.plan.target.vm_dialect)
    snapshot = copy.deepcopy(ctx.snapshot)
    initial = copy.deepcopy(ctx.initial_state) if ctx.initial_state is not None else None
    rows = []
    for address in sorted(snapshot.get("contracts", {}), key=bytes.fromhex):
        rec = snapshot["contracts"][address]
        code = vm.ContractCode(
            dialect=rec["dialect"],
            bytecode=bytes.fromhex(rec["bytecode"]),
            source=rec.get("source"),
            entrypoints=dict(rec.get("entrypoints", {})),
            entry_arity=dict(rec.get("entry_arity", {})),
        )
        translated = translate_contract(code, target_dialect)
        new_rec = dict(rec)
        new_rec.update(
            dialect=translated.dialect,
            bytecode=translated.bytecode.hex(),
            source=translated.source,
            entrypoints=dict(translated.entrypoints),
            entry_arity=dict(translated.entry_arity),
        )
        snapshot["contracts"][address] = new_rec
        if initial is not None and address in initial.get("contracts", {}):
            initial["contracts"][address] = dict(new_rec)
        rows.append(
            {
                "address": address,
                "from_dialect": code.dialect,
                "to_dialect": translated.dialect,
                "old_code_digest": code.code_digest(),
                "new_code_digest": translated.code_digest(),
            }
        )
    redeploys = 0
    for record in snapshot.get("captured_txs", []):
        if record.get("kind") != "deploy_contract":
            continue
        payload = dict(record["payload"])
        if payload.get("dialect") == target_dialect:
            continue
        code = vm.ContractCode(
            dialect=payload["dialect"],
            bytecode=bytes.fromhex(payload["bytecode"]),
            source=payload.get("source"),
            entrypoints=dict(payload.get("entrypoints", {})),
            entry_arity=dict(payload.get("entry_arity", {})),
        )
        translated = translate_contract(code, target_dialect)
        payload.update(
            dialect=translated.dialect,
            bytecode=translated.bytecode.hex(),
            source=translated.source,
            entrypoints=dict(translated.entrypoints),
            entry_arity=dict(translated.entry_arity),
        )
        # the replayed deploy must carry translated code or the target
        # VM rejects it; the replaced payload forces a re-sign on replay
        record["payload"] = payload
        redeploys += 1
    ctx.snapshot = snapshot
    if initial is not None:
        ctx.initial_state = initial
    return {
        "kind": "contract_translation_report",
        "target_dialect": target_dialect,
        "contracts": rows,
        "rewritten_deploys": redeploys,
    }


def _stage_off_chain_storage(ctx: RunContext, params: dict) -> dict:
    if ctx.snapshot is not None and "blocks" in ctx.snapshot:
        blocks = ctx.snapshot["blocks"]
    else:
        blocks = [block.record() for block in ctx.source.blocks]
    archive = {
        "kind": "block_archive",
        "chain_id": ctx.source.chain_id,
        "blocks": blocks,
    }
    digest = ctx.poe.put(archive)
    chain = ctx.anchor_chain()
    tx_id = anchor_digest(chain, _owner_key(params, ctx.info), digest, note="block_archive")
    return {
        "kind": "off_chain_report",
        "chain_id": chain.chain_id,
        "digest": digest,
        "anchor_tx": tx_id,
        "blocks": len(blocks),
    }


def _stage_encrypting(ctx: RunContext, params: dict) -> dict:
    subject = params.get("subject", "mapping")
    if subject == "mapping":
        content = ctx.mapping.to_doc()
    elif subject == "snapshot":
        if ctx.snapshot is None:
            raise OperationError("missing_snapshot", "nothing captured to seal")
        content = {"kind": "sealed_accounts", "accounts": ctx.snapshot["accounts"]}
    else:
        raise OperationError("bad_mode", f"unknown sealing subject {subject!r}")
    passphrase = params.get("passphrase", f"{ctx.doc.get('name', 'plan')}:{ctx.seed}")
    key = derive_sealing_key(passphrase)
    chain = ctx.anchor_chain()
    sealed = seal_and_anchor(chain, _owner_key(params, ctx.info), key, content, store=ctx.poe)
    report = {k: v for k, v in sealed.items() if k != "envelope"}
    report["chain_id"] = chain.chain_id
    report["subject"] = subject
    return report


_HANDLERS = {
    "snapshotting": _stage_snapshotting,
    "state_aggregation": _stage_state_aggregation,
    "establish_genesis": _stage_establish_genesis,
    "state_initialization": _stage_state_initialization,
    "hard_fork": _stage_hard_fork,
    "node_sync": _stage_node_sync,
    "exchange_transfer": _stage_exchange_transfer,
    "transaction_replay": _stage_transaction_replay,
    "token_burning": _stage_token_burning,
    "mapping_table": _stage_mapping_table,
    "sharding": _stage_sharding,
    "measure_migration_quality": _stage_measure,
    "vm_emulation": _stage_vm_emulation,
    "smart_contract_translation": _stage_contract_translation,
    "off_chain_data_storage": _stage_off_chain_storage,
    "encrypting_on_chain_data": _stage_encrypting,
}


def _stage_summary(pattern: str, artifact: dict) -> str:
    picks = {
        "snapshotting": ("accounts", "captured_txs"),
        "establish_genesis": ("accounts", "contracts"),
        "state_initialization": ("tx_count", "fee_total"),
        "transaction_replay": ("replayed", "fee_total_target"),
        "exchange_transfer": ("swaps", "commission_kept"),
        "token_burning": ("burned", "burn_txs"),
        "sharding": ("shards", "cross_shard_txs"),
        "measure_migration_quality": ("state_completeness", "success"),
    }.get(pattern, ())
    parts = []
    for key in picks:
        value = artifact.get(key)
        if isinstance(value, (list, dict)):
            value = len(value)
        parts.append(f"{key}={value}")
    return " ".join(parts) if parts else "ok"


# -- exact mirrors (shared by run sizing and dry-run) -----------------------


def mirror_state_init(
    basis: dict, target: ChainConfig, native_scope: str, external_policy: str
) -> tuple[int, int, int]:
    """(planned txs, fee total, native to fund) for a state load."""
    accounts = basis.get("accounts", {})
    contracts = basis.get("contracts", {})
    txs = 0
    native_total = 0
    for address, rec in accounts.items():
        if address in contracts:
            continue
        if rec.get("public_key") or external_policy == "stand_in":
            txs += 1
        txs += sum(1 for v in rec.get("tokens", {}).values() if v)
        native = rec.get("native", 0)
        if native and native_scope == "fund":
            txs += 1
        if address not in contracts:
            native_total += native
    txs += len(contracts)
    funded = native_total if native_scope == "fund" else 0
    return txs, target.tx_fee * txs, funded


def mirror_replay(snapshot: dict) -> tuple[int, int]:
    """(replayed txs, target fees) for an exact replay with copied fees."""
    contracts = snapshot.get("contracts", {})
    txs = 0
    fees = 0
    for rec in snapshot.get("captured_txs", []):
        if rec.get("operator"):
            continue
        if rec["sender"] in contracts:
            continue
        txs += 1
        fees += rec.get("fee_offered", 0)
    return txs, fees


def mirror_exchange(
    chain: ChainInstance, scope, rate, commission, registry: KeyRegistry, balances=None
) -> dict:
    """Per-account quote table matching the scope-transfer loop exactly."""
    rate = as_fraction(rate)
    commission = as_fraction(commission)
    fee = chain.config.tx_fee
    rows = []
    skipped = []
    for address in chain.app_addresses(scope):
        if address in chain.state.contracts:
            skipped.append({"address": address, "reason": "contract_custody"})
            continue
        acct = chain.state.accounts.get(address)
        if acct is None:
            continue
        native = balances.get(address, acct.native) if balances is not None else acct.native
        if native == 0:
            continue
        if acct.public_key is None or not registry.has_key(acct.public_key):
            skipped.append({"address": address, "reason": "missing_key"})
            continue
        spendable = native - fee
        if spendable <= 0:
            skipped.append({"address": address, "reason": "below_fee_floor"})
            continue
        gross_exact = rate * spendable
        net_exact = gross_exact * (1 - commission)
        gross = gross_exact.numerator // gross_exact.denominator
        net = net_exact.numerator // net_exact.denominator
        rows.append(
            {
                "address": address,
                "public_key": acct.public_key,
                "amount_in": spendable,
                "amount_out": net,
                "commission_kept": gross - net,
            }
        )
    return {
        "rows": rows,
        "skipped": skipped,
        "swaps": len(rows),
        "payout_total": sum(r["amount_out"] for r in rows),
        "commission_total": sum(r["commission_kept"] for r in rows),
    }


def _sim_balances(ctx_chain: ChainInstance) -> tuple[dict, dict]:
    natives = {}
    tokens = {}
    for address, acct in ctx_chain.state.accounts.items():
        natives[address] = acct.native
        tokens[address] = {t: v for t, v in acct.tokens.items() if v}
    return natives, tokens


def mirror_burn(
    chain: ChainInstance, scope, registry: KeyRegistry, natives: dict, tokens: dict
) -> dict:
    """Fee arithmetic of the burn sweep over simulated balances."""
    fee = chain.config.tx_fee
    in_scope = chain.app_addresses(scope)
    txs = 0
    fees = 0
    burned = 0
    for address in in_scope:
        if address in chain.state.contracts:
            continue
        acct = chain.state.accounts.get(address)
        if acct is None:
            continue
        native = natives.get(address, 0)
        held = sorted(t for t, v in tokens.get(address, {}).items() if v)
        if native == 0 and not held:
            continue
        if acct.public_key is None or not registry.has_key(acct.public_key):
            continue
        stalled = False
        for token in held:
            if native < fee:
                stalled = True
                break
            native -= fee
            fees += fee
            txs += 1
            tokens[address][token] = 0
        if not stalled and native >= fee:
            fees += fee
            txs += 1
            native = 0
            burned += 1
        natives[address] = native
    for address in in_scope:
        deployed = chain.state.contracts.get(address)
        if deployed is None:
            continue
        if chain.state.contract_states[address].status != vm.STATUS_ACTIVE:
            continue
        owner_acct = chain.state.accounts.get(deployed.owner)
        owner_key = owner_acct.public_key if owner_acct else None
        if owner_key and registry.has_key(owner_key) and natives.get(deployed.owner, 0) >= fee:
            natives[deployed.owner] -= fee
            fees += fee
            txs += 1
    return {"txs": txs, "fees": fees, "burned_accounts": burned}


def mirror_aggregation(
    chain: ChainInstance, groups: dict, mode: str, registry: KeyRegistry, natives: dict, tokens: dict
) -> dict:
    if mode != "on_chain":
        return {"txs": 0, "fees": 0}
    fee = chain.config.tx_fee
    txs = 0
    for gid in sorted(groups):
        for address in sorted(set(groups[gid])):
            acct = chain.state.accounts.get(address)
            if acct is None or acct.public_key is None or not registry.has_key(acct.public_key):
                continue
            native = natives.get(address, 0)
            for token in sorted(t for t, v in tokens.get(address, {}).items() if v):
                if native < fee:
                    break
                native -= fee
                txs += 1
                tokens[address][token] = 0
            spendable = native - fee
            if spendable > 0:
                txs += 1
                native = 0
            natives[address] = native
    return {"txs": txs, "fees": txs * fee}


def dry_run_plan(doc: dict, seed: int | None = None) -> dict:
    """Exact per-stage transaction and fee forecast.

    Builds the same source world a run would build, takes the same
    capture without freezing anything, and mirrors each stage's
    transaction arithmetic instead of executing it.
    """
    ndoc = normalize_plan_doc(doc, seed)
    plan = plan_from_doc(ndoc)
    violations = validate_plan(plan)
    if violations:
        raise PlanValidationError(violations)
    run_seed = ndoc["seed"]
    source, registry, info = build_source(ndoc, run_seed)
    replay_planned = "transaction_replay" in plan.patterns()
    snapshot = None
    initial = None
    natives, held = _sim_balances(source)
    target_live = not ndoc["target_is_new"]
    stages = []
    commission_total = 0
    for step in ndoc["pipeline"]:
        pattern = step["pattern"]
        params = step.get("params") or {}
        row = {"pattern": pattern, "txs": 0, "fees": {"source": 0, "target": 0}, "commission": 0}
        if pattern == "snapshotting":
            mode = params.get("mode")
            if mode is None:
                mode = "genesis" if replay_planned or plan.fidelity == "full_history" else "current"
            snapshot = take_snapshot(
                source, scope=_scope_arg(params, info), mode=mode, freeze_chain=False
            )
            if mode == "genesis":
                initial = initial_state_doc(snapshot)
        elif pattern == "state_initialization":
            basis = initial if replay_planned else snapshot
            if basis is None:
                raise OperationError("missing_snapshot", "no snapshot precedes the state load")
            txs, fees, funded = mirror_state_init(
                basis,
                plan.target,
                params.get("native_scope", "fund"),
                params.get("external_policy", "stand_in"),
            )
            row.update(txs=txs, fees={"source": 0, "target": fees})
            row["native_funded"] = funded
            target_live = True
        elif pattern == "transaction_replay":
            if snapshot is None:
                raise OperationError("missing_snapshot", "no snapshot precedes the replay")
            txs, fees = mirror_replay(snapshot)
            row.update(txs=txs, fees={"source": 0, "target": fees})
        elif pattern == "exchange_transfer":
            quotes = mirror_exchange(
                source,
                _scope_arg(params, info),
                params.get("rate", 1),
                params.get("commission", 0),
                registry,
                balances=natives,
            )
            fee_src = source.config.tx_fee * quotes["swaps"]
            fee_tgt = plan.target.tx_fee * quotes["swaps"]
            row.update(
                txs=2 * quotes["swaps"],
                fees={"source": fee_src, "target": fee_tgt},
                commission=quotes["commission_total"],
            )
            row["payout_total"] = quotes["payout_total"]
            row["quotes"] = quotes["rows"]
            commission_total += quotes["commission_total"]
            for q in quotes["rows"]:
                natives[q["address"]] = 0
            target_live = True
        elif pattern == "token_burning":
            outcome = mirror_burn(source, _scope_arg(params, info), registry, natives, held)
            row.update(txs=outcome["txs"], fees={"source": outcome["fees"], "target": 0})
            row["burned_accounts"] = outcome["burned_accounts"]
        elif pattern == "state_aggregation":
            groups = params.get("groups") or {}
            resolved = {
                gid: [resolve_account(m, info) for m in members]
                for gid, members in groups.items()
            }
            outcome = mirror_aggregation(
                source, resolved, params.get("mode", "off_chain"), registry, natives, held
            )
            row.update(txs=outcome["txs"], fees={"source": outcome["fees"], "target": 0})
        elif pattern in ("mapping_table", "off_chain_data_storage", "encrypting_on_chain_data"):
            side = "target" if target_live else "source"
            fee = (plan.target if side == "target" else plan.source).tx_fee
            row.update(txs=1, fees={"source": 0, "target": 0})
            row["fees"][side] = fee
        elif pattern in ("establish_genesis", "hard_fork", "node_sync"):
            target_live = True
        stages.append(row)
    totals = {
        "tx_count": sum(r["txs"] for r in stages),
        "fees": {
            "source": sum(r["fees"]["source"] for r in stages),
            "target": sum(r["fees"]["target"] for r in stages),
        },
        "commission": commission_total,
    }
    n_contracts = len(source.state.contracts)
    counts = {
        "accounts": len(source.app_addresses("all")) - n_contracts,
        "contracts": n_contracts,
        "txs": mirror_replay(snapshot)[0] if snapshot is not None else 0,
    }
    return {
        "kind": "dry_run_report",
        "schema_version": SCHEMA_VERSION,
        "plan_name": ndoc["name"],
        "seed": run_seed,
        "pipeline": [s["pattern"] for s in ndoc["pipeline"]],
        "stages": stages,
        "totals": totals,
        "planner_estimate": {
            "cost": estimate_cost(plan, counts),
            "latency_blocks": estimate_latency(plan),
        },
    }


# -- bundle writing ---------------------------------------------------------


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(canonical_json(doc) + b"\n")


def _write_manifest(out: Path) -> dict:
    files = {}
    for path in sorted(out.rglob("*")):
        if not path.is_file() or path.name == "MANIFEST.json":
            continue
        files[path.relative_to(out).as_posix()] = hexdigest(path.read_bytes())
    manifest = {
        "kind": "bundle_manifest",
        "schema_version": SCHEMA_VERSION,
        "files": files,
        "bundle_digest": hexdigest(canonical_json(files)),
    }
    _write_json(out / "MANIFEST.json", manifest)
    return manifest


def run_plan(doc: dict, out_dir: str | Path, seed: int | None = None) -> tuple[int, dict]:
    """Execute a plan and write the run bundle.  Returns (exit code, record)."""
    ndoc = normalize_plan_doc(doc, seed)
    plan = plan_from_doc(ndoc)
    violations = validate_plan(plan)
    if violations:
        raise PlanValidationError(violations)
    run_seed = ndoc["seed"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "artifacts").mkdir(exist_ok=True)
    source, registry, info = build_source(ndoc, run_seed)
    ctx = RunContext(
        plan=plan,
        doc=ndoc,
        seed=run_seed,
        source=source,
        registry=registry,
        info=info,
        poe=PoEStore(out / "poe_store"),
    )
    ctx.note_chain("source", source)
    log_lines = [f"plan {ndoc['name']} seed {run_seed}"]
    stages = []
    status = "ok"
    error = None
    for index, step in enumerate(ndoc["pipeline"], start=1):
        pattern = step["pattern"]
        params = step.get("params") or {}
        rel = f"artifacts/{index:02d}_{pattern}.json"
        try:
            artifact = _HANDLERS[pattern](ctx, params)
        except OperationError as exc:
            status = "stage_failed"
            error = {"stage": index, "pattern": pattern, "code": exc.code, "message": str(exc)}
            log_lines.append(f"[{index:02d}] {pattern}: failed {exc.code}")
            _write_json(out / rel, {"kind": "stage_error", **error})
            stages.append({"index": index, "pattern": pattern, "artifact": rel, "ok": False})
            break
        ctx.stage_reports.append(artifact)
        _write_json(out / rel, artifact)
        stages.append({"index": index, "pattern": pattern, "artifact": rel, "ok": True})
        log_lines.append(f"[{index:02d}] {pattern}: {_stage_summary(pattern, artifact)}")
    chains = {}
    for role, chain in ctx.chains().items():
        _write_json(out / "chains" / f"{role}.json", chain.export_state_doc(include_blocks=True))
        sink = chain.balance(fee_sink(chain.config.id_scheme))
        chains[role] = {
            "chain_id": chain.chain_id,
            "head": chain.head,
            "state_root": chain.blocks[-1].state_root,
            "fee_sink": sink,
            "fee_delta": sink - ctx.fee_start.get(role, 0),
        }
    _write_json(out / "chains" / "keys.json", registry.export_seeds())
    if ctx.quality is not None:
        _write_json(out / "quality_report.json", ctx.quality)
    exit_code = EXIT_OK if status == "ok" else EXIT_STAGE_FAILED
    record = {
        "kind": "run_record",
        "schema_version": SCHEMA_VERSION,
        "plan_name": ndoc["name"],
        "seed": run_seed,
        "status": status,
        "error": error,
        "stages": stages,
        "chains": chains,
        "commission_kept": sum(
            r.get("commission_kept", 0) for r in ctx.stage_reports if isinstance(r, dict)
        ),
        "exit_code": exit_code,
    }
    log_lines.append(f"status {status}")
    _write_json(out / "plan.json", ndoc)
    _write_json(out / "run.json", record)
    (out / "run.log").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    _write_manifest(out)
    return exit_code, record


# -- bundle verification -----------------------------------------------------


def _check(checks: list, name: str, ok: bool, detail: str = "") -> bool:
    checks.append({"check": name, "ok": bool(ok), "detail": detail})
    return bool(ok)


def verify_bundle(bundle_dir: str | Path) -> dict:
    """Audit a run bundle without trusting anything inside it.

    Re-hashes every listed file, recomputes the bundle digest, checks
    the evidence store's content addressing, re-derives snapshot and
    mapping digests, and replays both chain dumps from genesis under
    full signature verification, re-running the snapshot extraction at
    the captured block as an independent oracle.
    """
    out = Path(bundle_dir)
    checks: list[dict] = []
    report = {"kind": "verify_report", "bundle": str(out), "checks": checks}
    manifest_path = out / "MANIFEST.json"
    if not manifest_path.is_file():
        _check(checks, "manifest_present", False, "MANIFEST.json missing")
        report["ok"] = False
        return report
    try:
        manifest = load_json(manifest_path.read_bytes())
    except ValueError as exc:
        _check(checks, "manifest_present", False, f"unreadable: {exc}")
        report["ok"] = False
        return report
    _check(checks, "manifest_present", True)
    files = manifest.get("files", {})
    bad = []
    for rel, digest in sorted(files.items()):
        path = out / rel
        if not path.is_file():
            bad.append(f"{rel}: missing")
        elif hexdigest(path.read_bytes()) != digest:
            bad.append(f"{rel}: digest mismatch")
    _check(checks, "file_digests", not bad, "; ".join(bad[:5]))
    unlisted = [
        p.relative_to(out).as_posix()
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != "MANIFEST.json" and p.relative_to(out).as_posix() not in files
    ]
    _check(checks, "no_unlisted_files", not unlisted, "; ".join(unlisted[:5]))
    _check(
        checks,
        "bundle_digest",
        manifest.get("bundle_digest") == hexdigest(canonical_json(files)),
    )

    store_dir = out / "poe_store"
    bad = []
    if store_dir.is_dir():
        for blob in sorted(store_dir.iterdir()):
            if blob.is_file() and hexdigest(blob.read_bytes()) != blob.name:
                bad.append(blob.name[:12])
    _check(checks, "evidence_content_addressed", not bad, "; ".join(bad))

    artifacts = []
    for path in sorted((out / "artifacts").glob("*.json")) if (out / "artifacts").is_dir() else []:
        try:
            artifacts.append((path.name, load_json(path.read_bytes())))
        except ValueError:
            _check(checks, "artifact_parse", False, path.name)
            report["ok"] = False
            return report

    snapshots = [a for _, a in artifacts if a.get("kind") == "snapshot"]
    ok = True
    detail = ""
    for snap in snapshots:
        try:
            verify_snapshot(snap)
        except OperationError as exc:
            ok, detail = False, str(exc)
    _check(checks, "snapshot_digests", ok, detail)

    ok = True
    detail = ""
    for name, art in artifacts:
        if art.get("kind") != "mapping_anchor":
            continue
        table = MappingTable.from_doc(art["table"])
        if table.digest() != hexdigest(canonical_json(art["table"])):
            ok, detail = False, f"{name}: table digest drifted"
        blob = store_dir / art["digest"]
        if not blob.is_file():
            ok, detail = False, f"{name}: anchored blob missing from the store"
        elif table.digest() != art["digest"]:
            ok, detail = False, f"{name}: anchor does not match the table"
    _check(checks, "mapping_anchors", ok, detail)

    keys_path = out / "chains" / "keys.json"
    registry = KeyRegistry()
    if keys_path.is_file():
        for _, seedhex in sorted(load_json(keys_path.read_bytes()).items()):
            registry.register_seed(seedhex)
    replicas = {}
    chain_files = (
        sorted(p for p in (out / "chains").glob("*.json") if p.name != "keys.json")
        if (out / "chains").is_dir()
        else []
    )
    for path in chain_files:
        dump = load_json(path.read_bytes())
        blocks = [block_from_record(rec) for rec in dump.get("blocks", [])]
        try:
            replica = replay_blocks(dump["genesis"], registry, blocks)
        except OperationError as exc:
            _check(checks, f"chain_replay:{path.stem}", False, str(exc))
            continue
        same_root = replica.blocks[-1].state_root == dump["state_root"]
        same_accounts = {
            a: r.record() for a, r in sorted(replica.state.accounts.items())
        } == dump["accounts"]
        _check(
            checks,
            f"chain_replay:{path.stem}",
            same_root and same_accounts,
            "" if same_root and same_accounts else "replayed state differs from the dump",
        )
        replicas[dump["chain_id"]] = (dump, blocks)

    ok = True
    detail = ""
    for snap in snapshots:
        pair = replicas.get(snap.get("source_chain_id"))
        if pair is None:
            continue
        dump, blocks = pair
        boundary = snap["taken_at_block"]
        if boundary >= len(blocks):
            ok, detail = False, "snapshot boundary past the dumped head"
            continue
        try:
            replica = replay_blocks(dump["genesis"], registry, blocks[: boundary + 1])
        except OperationError as exc:
            ok, detail = False, str(exc)
            continue
        for address, rec in snap.get("accounts", {}).items():
            acct = replica.state.accounts.get(address)
            got = acct.record() if acct else None
            if got != rec:
                ok, detail = False, f"account {address[:12]} diverges at the boundary"
                break
        for address in snap.get("contracts", {}):
            if address not in replica.state.contracts:
                ok, detail = False, f"contract {address[:12]} absent at the boundary"
                break
    _check(checks, "snapshot_oracle", ok, detail)

    run_path = out / "run.json"
    if run_path.is_file():
        run = load_json(run_path.read_bytes())
        consistent = (run.get("status") == "ok") == (run.get("exit_code") == EXIT_OK)
        _check(checks, "run_record_consistent", consistent)

    report["ok"] = all(c["ok"] for c in checks)
    return report


# -- entrypoint --------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="chainmig", description="execute, estimate, or audit migration plans"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a plan and write a run bundle")
    p_run.add_argument("--plan", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_dry = sub.add_parser("dry-run", help="estimate a plan without running it")
    p_dry.add_argument("--plan", required=True)
    p_dry.add_argument("--seed", type=int, default=None)
    p_ver = sub.add_parser("verify", help="audit a run bundle")
    p_ver.add_argument("bundle")
    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            doc = load_plan_doc(args.plan)
            code, record = run_plan(doc, args.out, args.seed)
            print(json.dumps(record, indent=2, sort_keys=True))
            return code
        if args.command == "dry-run":
            doc = load_plan_doc(args.plan)
            report = dry_run_plan(doc, args.seed)
            print(json.dumps(report, indent=2, sort_keys=True))
            return EXIT_OK
        report = verify_bundle(args.bundle)
        print(json.dumps(report, indent=2, sort_keys=True))
        return EXIT_OK if report["ok"] else EXIT_VERIFY_FAILED
    except PlanValidationError as exc:
        print(f"invalid plan: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OperationError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
