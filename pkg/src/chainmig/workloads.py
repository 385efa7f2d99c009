"""Seeded synthetic traffic for exercising migrations.

Everything here is a pure function of its seed: key material comes from
labels, amounts and counterparties from a private `random.Random`, so a
workload replayed with the same seed rebuilds the same chain byte for
byte.  Generators cover plain payments (for replay-fidelity checks),
mixed app traffic with tokens and a contract, clique-structured
payments (for shard-placement comparisons), and call scripts for
engine-equivalence checks.
"""

from __future__ import annotations

import random

from . import contracts as vm
from .ledger import ChainConfig, ChainInstance, KeyRegistry, derive_address


def genesis_for(config: ChainConfig, holders: dict[str, int], tokens=None) -> dict:
    """Genesis document allocating native units per public key."""
    allocations = {}
    for public_key, native in holders.items():
        address = derive_address(public_key, config.id_scheme)
        alloc: dict = {"public_key": public_key, "native": int(native)}
        if tokens and public_key in tokens:
            alloc["tokens"] = dict(tokens[public_key])
        allocations[address] = alloc
    return {"config": config.to_record(), "allocations": allocations}


def fresh_chain(
    chain_id: str,
    holder_count: int = 8,
    *,
    endowment: int = 500,
    config: ChainConfig | None = None,
    registry: KeyRegistry | None = None,
) -> tuple[ChainInstance, KeyRegistry, list[str]]:
    """A funded chain with labeled keys; fully determined by its arguments."""
    cfg = config or ChainConfig(chain_id=chain_id, tx_fee=1, finality_depth=1, block_capacity=16)
    registry = registry or KeyRegistry()
    keys = [
        registry.create_key_from_label(f"{chain_id}:holder:{i}") for i in range(holder_count)
    ]
    chain = ChainInstance(cfg, registry, genesis_for(cfg, {k: endowment for k in keys}))
    return chain, registry, keys


def _try_transfer(chain: ChainInstance, sender: str, receiver_addr: str, amount: int) -> bool:
    tx = chain.make_tx(sender, receiver_addr, "transfer_native", {"amount": amount})
    return bool(chain.submit_tx(tx).accepted)


def transfer_workload(
    chain: ChainInstance, keys: list[str], seed: int, tx_count: int = 30
) -> int:
    """Plain native payments among the holders; returns txs accepted."""
    rng = random.Random(f"transfers:{seed}")
    addresses = [chain.address_for(k) for k in keys]
    sent = 0
    for _ in range(tx_count):
        sender = rng.choice(keys)
        receiver = rng.choice([a for a in addresses if a != chain.address_for(sender)])
        if _try_transfer(chain, sender, receiver, rng.randint(1, 9)):
            sent += 1
        if rng.random() < 0.4:
            chain.produce_block()
    while chain.mempool:
        chain.produce_block()
    return sent


def mixed_workload(
    chain: ChainInstance, keys: list[str], seed: int, tx_count: int = 30
) -> dict:
    """Payments plus a ledger token and one contract with seeded calls.

    keys[0] deploys the token contract and issues the ledger token; the
    rest trade.  Returns the contract address, token id, and counts.
    """
    rng = random.Random(f"mixed:{seed}")
    issuer = keys[0]
    addresses = [chain.address_for(k) for k in keys]
    dialect = "dialectA" if chain.config.vm_dialect == "emulating" else chain.config.vm_dialect

    contract_addr = chain.deploy_contract(vm.token_code(dialect), issuer, (1000,))
    token = f"tok-{seed % 7}"
    mint = chain.make_tx(
        issuer,
        chain.address_for(issuer),
        "transfer_token",
        {"token": token, "amount": 500, "mint": True},
    )
    chain.submit_tx(mint)
    chain.produce_block()

    sent = 0
    for _ in range(tx_count):
        roll = rng.random()
        sender = rng.choice(keys)
        receiver = rng.choice([a for a in addresses if a != chain.address_for(sender)])
        if roll < 0.5:
            sent += _try_transfer(chain, sender, receiver, rng.randint(1, 9))
        elif roll < 0.8:
            tx = chain.make_tx(
                issuer, receiver, "transfer_token", {"token": token, "amount": rng.randint(1, 5)}
            )
            sent += bool(chain.submit_tx(tx).accepted)
        else:
            chain.call_contract(contract_addr, "transfer", (int(receiver, 16), rng.randint(1, 4)), issuer)
            sent += 1
        if rng.random() < 0.5:
            chain.produce_block()
    while chain.mempool:
        chain.produce_block()
    return {"contract": contract_addr, "token": token, "submitted": sent}


def clustered_workload(
    chain: ChainInstance,
    keys: list[str],
    seed: int,
    clique_count: int = 4,
    tx_count: int = 120,
) -> dict[str, int]:
    """Payments that stay inside account cliques.

    Holders are dealt round-robin into `clique_count` cliques and only
    pay clique-mates, so transaction affinity mirrors the clique
    structure while address prefixes stay uncorrelated with it.
    Returns the clique index per address."""
    rng = random.Random(f"cliques:{seed}")
    cliques: list[list[str]] = [[] for _ in range(clique_count)]
    for i, key in enumerate(keys):
        cliques[i % clique_count].append(key)
    membership = {
        chain.address_for(k): i for i, group in enumerate(cliques) for k in group
    }
    for _ in range(tx_count):
        group = rng.choice([c for c in cliques if len(c) > 1])
        sender = rng.choice(group)
        receiver = rng.choice([k for k in group if k != sender])
        _try_transfer(chain, sender, chain.address_for(receiver), rng.randint(1, 5))
        if rng.random() < 0.3:
            chain.produce_block()
    while chain.mempool:
        chain.produce_block()
    return membership


def call_script(seed: int, call_count: int = 100, holders: int = 4) -> list[tuple[str, tuple]]:
    """Seeded (method, args) script for the standard token contract.

    Arguments reference holder slots 0..holders-1; the runner maps the
    slots to concrete addresses on whichever chain executes the script.
    Only always-legal calls are generated (reads, owner-sent transfers
    and mints with small amounts), so two engines must agree on every
    return value."""
    rng = random.Random(f"calls:{seed}")
    script: list[tuple[str, tuple]] = []
    for _ in range(call_count):
        roll = rng.random()
        if roll < 0.3:
            script.append(("balance_of", (rng.randrange(holders),)))
        elif roll < 0.45:
            script.append(("total_supply", ()))
        elif roll < 0.55:
            script.append(("owner", ()))
        elif roll < 0.8:
            script.append(("transfer", (rng.randrange(holders), rng.randint(1, 3))))
        elif roll < 0.95:
            script.append(("mint", (rng.randrange(holders), rng.randint(1, 3))))
        else:
            script.append(("burn", (1,)))
    return script
