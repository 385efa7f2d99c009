"""Carry contracts across execution dialects.

Three strategies, in order of preference: carry the binary unchanged
(dialects match), run it under the target's emulation mode, or rebuild
it from source for the target dialect.  A rebuilt binary is never
trusted on its own: `verify_translation` drives both binaries through
a seeded call corpus in a sandbox and demands identical observable
behavior (storage writes, emissions, logs, outcome, returned value)
before anything deploys.  Sources and binaries are anchored for audit.
"""

from __future__ import annotations

import random

from .. import contracts as vm
from ..canonical import canonical_json, hexdigest
from ..errors import OperationError
from ..ledger import ChainInstance, contract_address
from .capture import MappingTable
from .poe import PoEStore, anchor_digest


def translate_contract(code: vm.ContractCode, target_dialect: str) -> vm.ContractCode:
    """Rebuild from assembly source for another dialect.  Opcode values
    and immediate widths differ between dialects, so this is a real
    re-assembly, not a byte patch; without source the binary is
    disassembled first.  When the code carries both source and binary,
    the source must reproduce the binary before it is trusted."""
    if target_dialect == code.dialect:
        return code
    if code.source is None:
        if not code.bytecode:
            raise OperationError(
                "source_unavailable", "cannot retarget a binary without its source"
            )
        code = vm.ContractCode(
            dialect=code.dialect,
            bytecode=code.bytecode,
            source=vm.disassemble(code),
            entrypoints=dict(code.entrypoints),
            entry_arity=dict(code.entry_arity),
        )
    if code.bytecode:
        vm.recompile_check(code)
    try:
        return vm.assemble(code.source, target_dialect)
    except OperationError as err:
        if err.code == "parse_error":
            raise OperationError(
                "untranslatable_op", f"source does not assemble for {target_dialect}: {err}"
            ) from err
        raise


def vm_emulate(
    target: ChainInstance,
    code: vm.ContractCode,
    deployer_pubkey: str,
    ctor_args=(),
) -> str:
    """Deploy a foreign-dialect binary unmodified on a chain whose
    engine can execute it: no translation stage, fees only."""
    vm.validate_code(code)
    if code.dialect not in vm.executable_dialects(target.config.vm_dialect):
        raise OperationError(
            "emulation_unsupported",
            f"{target.chain_id} cannot execute {code.dialect} binaries",
        )
    return target.deploy_contract(code, deployer_pubkey, ctor_args, operator_pass=True)


def _observable(result: vm.CallResult) -> tuple:
    trace = result.trace
    return (
        trace.storage_writes,
        trace.emitted,
        trace.logs,
        trace.outcome,
        trace.returned,
        result.terminated,
        result.destroyed,
    )


def _corpus(code: vm.ContractCode, seed: int, calls: int):
    rng = random.Random(seed)
    methods = sorted(code.entrypoints)
    for _ in range(calls):
        method = rng.choice(methods)
        arity = code.entry_arity.get(method, 0)
        args = tuple(
            rng.randrange(0, 2**32) if rng.random() < 0.7 else rng.randrange(0, 2**160)
            for _ in range(arity)
        )
        caller = rng.randrange(1, 2**160)
        value = rng.randrange(0, 1_000)
        yield method, args, caller, value


def verify_translation(
    original: vm.ContractCode,
    translated: vm.ContractCode,
    seed: int = 0,
    calls: int = 100,
    strict: bool = True,
) -> dict:
    """Differential run over a seeded corpus with persistent sandbox
    storage per side; any observable divergence is an equivalence
    failure."""
    if sorted(original.entrypoints) != sorted(translated.entrypoints):
        raise OperationError("equivalence_failure", "entrypoint sets differ")
    storage_a: dict[int, int] = {}
    storage_b: dict[int, int] = {}
    mismatches = []
    ran = 0
    for method, args, caller, value in _corpus(original, seed, calls):
        ctx = vm.CallContext(caller=caller, callvalue=value)
        result_a = vm.run_call(original, method, args, ctx, storage_a.get)
        result_b = vm.run_call(translated, method, args, ctx, storage_b.get)
        ran += 1
        if _observable(result_a) != _observable(result_b):
            mismatches.append(
                {
                    "call": ran,
                    "method": method,
                    "args": [str(a) for a in args],
                    "outcome_original": result_a.trace.outcome,
                    "outcome_translated": result_b.trace.outcome,
                }
            )
            continue
        if result_a.trace.ok:
            for key, _old, new in result_a.trace.storage_writes:
                storage_a[key] = new
            for key, _old, new in result_b.trace.storage_writes:
                storage_b[key] = new
    report = {
        "kind": "translation_check",
        "seed": seed,
        "calls": ran,
        "mismatches": mismatches,
        "final_storage_equal": storage_a == storage_b,
        "ok": not mismatches and storage_a == storage_b,
    }
    if strict and not report["ok"]:
        raise OperationError(
            "equivalence_failure",
            f"{len(mismatches)} divergent calls out of {ran}",
            report=report,
        )
    return report


def migrate_contract(
    source_chain: ChainInstance,
    target_chain: ChainInstance,
    address: str,
    operator_pubkey: str,
    poe_store: PoEStore | None = None,
    mapping: MappingTable | None = None,
    seed: int = 0,
    calls: int = 100,
) -> dict:
    """Move one deployed contract, state included, to the target chain."""
    deployed = source_chain.state.contracts.get(address)
    if deployed is None:
        raise OperationError("not_deployed", f"{address[:12]} is not a contract")
    code = deployed.code
    cstate = source_chain.state.contract_states[address]
    logical = {str(k): v for k, v in sorted(cstate.logical_items(code.dialect).items())}
    stored = {k: v for k, v in cstate.storage.items() if v}
    if len(logical) < len(stored):
        raise OperationError(
            "storage_opaque", f"{address[:12]} has slots with no logical key"
        )

    target_native = target_chain.config.vm_dialect
    verify_report = None
    if code.dialect in vm.executable_dialects(target_native):
        strategy = "carry" if code.dialect == target_native else "emulated"
        out_code = code
    else:
        out_code = translate_contract(code, target_native)
        verify_report = verify_translation(code, out_code, seed=seed, calls=calls)
        strategy = "translated"

    anchors = []
    if poe_store is not None:
        artifacts = {"binary_original": code.bytecode.hex()}
        if code.source is not None:
            artifacts["source_text"] = code.source
        if strategy == "translated":
            artifacts["binary_translated"] = out_code.bytecode.hex()
        for label, blob in sorted(artifacts.items()):
            digest = poe_store.put(blob)
            tx_id = anchor_digest(
                target_chain, operator_pubkey, digest, note=f"contract:{label}"
            )
            anchors.append({"label": label, "digest": digest, "tx_id": tx_id})

    funder = target_chain.address_for(operator_pubkey)
    nonce = target_chain.next_nonce(funder)
    tx = target_chain.make_tx(
        operator_pubkey,
        funder,
        "deploy_contract",
        {
            "dialect": out_code.dialect,
            "bytecode": out_code.bytecode.hex(),
            "source": out_code.source,
            "entrypoints": out_code.entrypoints,
            "entry_arity": out_code.entry_arity,
            "skip_init": True,
            "storage_logical": logical,
        },
        nonce=nonce,
    )
    target_address = contract_address(funder, nonce, target_chain.config.id_scheme)
    target_chain.submit_or_raise(tx, operator_pass=True)
    target_chain.produce_block()
    if target_address not in target_chain.state.contracts:
        reason = dict(target_chain.drop_log).get(tx.tx_id, "deploy_failed")
        raise OperationError(reason, "migrated contract did not deploy")
    if mapping is not None and mapping.by_source(address) is None:
        mapping.add(f"contract:{address}", "contract", address, target_address, strategy)

    return {
        "kind": "contract_migration_report",
        "source_chain_id": source_chain.chain_id,
        "target_chain_id": target_chain.chain_id,
        "source_address": address,
        "target_address": target_address,
        "strategy": strategy,
        "verify": verify_report,
        "poe": anchors,
        "deploy_tx": tx.tx_id,
        "storage_keys_carried": len(logical),
        "status": cstate.status,
    }


def emulation_trace_report(
    chain_a: ChainInstance,
    chain_b: ChainInstance,
    address_a: str,
    address_b: str,
    caller_pubkey: str,
    seed: int = 0,
    calls: int = 20,
) -> dict:
    """Drive the same seeded call sequence against two deployments of
    the same binary and compare the full traces, steps included."""
    code = chain_a.state.contracts[address_a].code
    rng = random.Random(seed)
    methods = sorted(
        m for m in code.entrypoints
        if m != "init" and not code.entry_arity.get(m, 0)
    ) or sorted(code.entrypoints)
    divergence = None
    compared = 0
    for i in range(calls):
        method = rng.choice(methods)
        arity = code.entry_arity.get(method, 0)
        args = [rng.randrange(0, 2**32) for _ in range(arity)]
        value = rng.randrange(0, 100)
        trace_a = chain_a.call_contract(address_a, method, args, caller_pubkey, value=value)
        trace_b = chain_b.call_contract(address_b, method, args, caller_pubkey, value=value)
        compared += 1
        if trace_a.record() != trace_b.record():
            divergence = {"call": i, "method": method}
            break
    return {
        "kind": "emulation_report",
        "chain_a": chain_a.chain_id,
        "chain_b": chain_b.chain_id,
        "calls": compared,
        "identical": divergence is None,
        "first_divergence": divergence,
    }
