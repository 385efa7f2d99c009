"""The concert nonprofit, as a ready-made chain.

A nonprofit runs its event bookkeeping on a public chain: one account
per budget item, a ConcertCoin token to insulate the books from price
swings, a funding contract that disperses seed money, and a pledge
contract for charity commitments.  Ticket buyers hold coins too, and a
couple of them were only ever seen as receiving addresses, so their
keys are nobody's to migrate.  Fees used to be waived; now every
transaction costs, which is why the books are moving.

This module builds that world deterministically so integration tests
and the bundled example plans can all start from the same place.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from . import contracts as vm
from .ledger import ChainConfig, ChainInstance, KeyRegistry
from .workloads import genesis_for

CONCERT_TOKEN = "concertcoin"

BUDGET_ITEMS = ("venue", "equipment", "marketing", "artists", "charity")


@dataclass
class ConcertFixture:
    chain: ChainInstance
    registry: KeyRegistry
    organizer: str
    budget: dict[str, str] = field(default_factory=dict)
    buyers: list[str] = field(default_factory=list)
    externals: list[str] = field(default_factory=list)
    funding_contract: str = ""
    pledge_contract: str = ""
    token: str = CONCERT_TOKEN

    def app_keys(self) -> list[str]:
        return [self.organizer, *self.budget.values(), *self.buyers]

    def addresses(self) -> list[str]:
        own = [self.chain.address_for(k) for k in self.app_keys()]
        return own + list(self.externals)


def source_config(fee: int = 1) -> ChainConfig:
    """The public chain the nonprofit is leaving."""
    return ChainConfig(
        chain_id="concert-main",
        permission_mode="public",
        tx_fee=fee,
        finality_depth=2,
        block_capacity=16,
        vm_dialect="dialectA",
        allows_hard_fork=False,
        allows_genesis_control=False,
    )


def split_target_config(chain_id: str = "committee", fee: int = 1) -> ChainConfig:
    """A new private chain, same platform family as the source."""
    return ChainConfig(
        chain_id=chain_id,
        permission_mode="private",
        tx_fee=fee,
        finality_depth=1,
        block_capacity=32,
        vm_dialect="dialectA",
        allows_hard_fork=True,
        allows_genesis_control=True,
    )


def public_target_config(chain_id: str = "bigchain", fee: int = 1) -> ChainConfig:
    """An established public chain with a different engine."""
    return ChainConfig(
        chain_id=chain_id,
        permission_mode="public",
        tx_fee=fee,
        finality_depth=2,
        block_capacity=32,
        vm_dialect="dialectB",
        allows_hard_fork=False,
        allows_genesis_control=False,
    )


def concert_fixture(
    seed: int = 0,
    *,
    fee: int = 1,
    buyer_count: int = 5,
    external_count: int = 2,
    config: ChainConfig | None = None,
) -> ConcertFixture:
    """Build the nonprofit's chain with its full cast and history."""
    rng = random.Random(f"concert:{seed}")
    cfg = config or source_config(fee)
    registry = KeyRegistry()
    organizer = registry.create_key_from_label("concert:organizer")
    budget = {item: registry.create_key_from_label(f"concert:budget:{item}") for item in BUDGET_ITEMS}
    buyers = [registry.create_key_from_label(f"concert:buyer:{i}") for i in range(buyer_count)]

    # outside buyers: their keys live in someone else's wallet
    outside = KeyRegistry()
    external_keys = [
        outside.create_key_from_label(f"concert:external:{i}") for i in range(external_count)
    ]

    holders = {organizer: 10_000}
    holders.update({k: 200 for k in budget.values()})
    holders.update({k: 150 for k in buyers})
    chain = ChainInstance(cfg, registry, genesis_for(cfg, holders))
    externals = []

    def pay(sender: str, receiver_addr: str, amount: int) -> None:
        tx = chain.make_tx(sender, receiver_addr, "transfer_native", {"amount": amount})
        chain.submit_or_raise(tx)

    def grant(receiver_addr: str, amount: int) -> None:
        tx = chain.make_tx(
            organizer, receiver_addr, "transfer_token", {"token": CONCERT_TOKEN, "amount": amount}
        )
        chain.submit_or_raise(tx)

    # seed money becomes ConcertCoin; the first mint registers the issuer
    mint = chain.make_tx(
        organizer,
        chain.address_for(organizer),
        "transfer_token",
        {"token": CONCERT_TOKEN, "amount": 5_000, "mint": True},
    )
    chain.submit_or_raise(mint)
    chain.produce_block()

    for key in budget.values():
        grant(chain.address_for(key), 300)
    chain.produce_block()
    for key in buyers:
        grant(chain.address_for(key), rng.randint(30, 60))
    chain.produce_block()

    for ext in external_keys:
        address = chain.address_for(ext)
        externals.append(address)
        pay(organizer, address, rng.randint(5, 15))
        grant(address, rng.randint(10, 25))
    chain.produce_block()

    # funding contract disperses seed money per budget item
    funding = chain.deploy_contract(vm.token_code(cfg.vm_dialect), organizer, (1_000,))
    for item in ("venue", "equipment"):
        chain.call_contract(
            funding,
            "transfer",
            (int(chain.address_for(budget[item]), 16), rng.randint(40, 80)),
            organizer,
        )

    # pledge book takes value alongside the call
    pledge = chain.deploy_contract(vm.pledge_code(cfg.vm_dialect), organizer, ())
    for key in buyers[: max(1, buyer_count // 2)]:
        chain.call_contract(pledge, "pledge", (), key, value=rng.randint(3, 9))

    # ticket sales in both directions of the books
    for key in buyers:
        pay(key, chain.address_for(budget["venue"]), rng.randint(2, 6))
    chain.produce_block()
    for _ in range(cfg.finality_depth):
        chain.produce_block()

    return ConcertFixture(
        chain=chain,
        registry=registry,
        organizer=organizer,
        budget=budget,
        buyers=buyers,
        externals=externals,
        funding_contract=funding,
        pledge_contract=pledge,
    )
