"""Asset movement between chains through an exchange desk.

The desk holds its own custody accounts on both chains.  A swap is two
legs: the user deposits into source custody, and after the deposit block
is final on the source chain the desk pays out on the target chain.
Quotes are exact rational arithmetic floored once at the end, so every
unit is accounted for: amount_out + commission_kept == gross quote.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

from .errors import OperationError
from .ledger import ChainInstance, KeyRegistry

PENDING = "pending"
SETTLED = "settled"


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, (tuple, list)) and len(value) == 2:
        return Fraction(int(value[0]), int(value[1]))
    raise OperationError("bad_rate", f"cannot read a ratio from {value!r}")


@dataclass(frozen=True)
class Listing:
    listing_id: str
    source_asset: str  # "native" or a token id on the source chain
    target_asset: str
    rate: Fraction  # target units per source unit
    commission: Fraction  # fraction of the gross quote kept by the desk

    def __post_init__(self):
        if self.rate <= 0:
            raise OperationError("bad_rate", "rate must be positive")
        if not 0 <= self.commission < 1:
            raise OperationError("bad_rate", "commission must sit in [0, 1)")


@dataclass(frozen=True)
class SwapReceipt:
    listing_id: str
    sender: str
    destination: str
    amount_in: int
    gross_out: int
    amount_out: int
    commission_kept: int
    deposit_tx: str
    deposit_block: int
    fee_paid: int = 0  # chain tx fees across both legs, not commission
    payout_tx: str | None = None
    status: str = PENDING

    def record(self) -> dict:
        return {
            "listing_id": self.listing_id,
            "sender": self.sender,
            "destination": self.destination,
            "amount_in": self.amount_in,
            "gross_out": self.gross_out,
            "amount_out": self.amount_out,
            "commission_kept": self.commission_kept,
            "deposit_tx": self.deposit_tx,
            "deposit_block": self.deposit_block,
            "fee_paid": self.fee_paid,
            "payout_tx": self.payout_tx,
            "status": self.status,
        }


@dataclass
class ExchangeDesk:
    source: ChainInstance
    target: ChainInstance
    registry: KeyRegistry
    desk_label: str = "exchange-desk"
    listed: set = field(default_factory=set)  # (chain_id, asset_id) pairs
    listings: dict[str, Listing] = field(default_factory=dict)
    receipts: list[SwapReceipt] = field(default_factory=list)

    def __post_init__(self):
        self.desk_key = self.registry.create_key_from_label(self.desk_label)
        self.custody_source = self.source.address_for(self.desk_key)
        self.custody_target = self.target.address_for(self.desk_key)

    def list_asset(self, chain_id: str, asset_id: str) -> None:
        """Register an asset for trading.  Target-side listings require
        custody funded for at least one minimal payout."""
        if chain_id == self.source.chain_id:
            chain, custody = self.source, self.custody_source
        elif chain_id == self.target.chain_id:
            chain, custody = self.target, self.custody_target
        else:
            raise OperationError("unknown_chain", f"desk serves neither side of {chain_id!r}")
        if chain is self.target:
            acct = chain.get_account(custody)
            native = acct.native if acct else 0
            fee = chain.config.tx_fee
            if asset_id == "native":
                funded = native >= fee + 1
            else:
                funded = (acct.tokens.get(asset_id, 0) if acct else 0) >= 1 and native >= fee
            if not funded:
                raise OperationError(
                    "unfunded_custody", f"custody on {chain_id} cannot pay out {asset_id}"
                )
        elif asset_id == self.wrapped_native_id():
            # wrapper listings mint from custody, so it must be able to sign
            acct = chain.get_account(custody)
            if acct is None or acct.public_key is None:
                raise OperationError(
                    "unfunded_custody",
                    f"custody on {chain_id} cannot mint {asset_id}; introduce the desk account first",
                )
        self.listed.add((chain_id, asset_id))

    def open_listing(self, listing_id: str, source_asset: str, target_asset: str, rate, commission=0) -> Listing:
        for chain, asset in ((self.source, source_asset), (self.target, target_asset)):
            if (chain.chain_id, asset) not in self.listed:
                raise OperationError(
                    "unknown_listing", f"{asset!r} is not listed on {chain.chain_id}"
                )
        listing = Listing(
            listing_id=listing_id,
            source_asset=source_asset,
            target_asset=target_asset,
            rate=as_fraction(rate),
            commission=as_fraction(commission),
        )
        self.listings[listing_id] = listing
        return listing

    def _listing(self, listing_id: str) -> Listing:
        listing = self.listings.get(listing_id)
        if listing is None:
            raise OperationError("unknown_listing", f"no listing {listing_id!r}")
        return listing

    def listing_for(self, source_asset: str, target_asset: str) -> Listing:
        for listing_id in sorted(self.listings):
            listing = self.listings[listing_id]
            if listing.source_asset == source_asset and listing.target_asset == target_asset:
                return listing
        raise OperationError("unknown_listing", f"no rate for {source_asset} -> {target_asset}")

    def quote(self, listing_id: str, amount_in: int) -> tuple[int, int]:
        """(amount_out, commission_kept); each side floored exactly once."""
        listing = self._listing(listing_id)
        gross_exact = listing.rate * amount_in
        net_exact = gross_exact * (1 - listing.commission)
        gross = gross_exact.numerator // gross_exact.denominator
        net = net_exact.numerator // net_exact.denominator
        return net, gross - net

    def deposit(self, user_pubkey: str, listing_id: str, amount_in: int) -> SwapReceipt:
        """First leg: user pays `amount_in` of the source asset into custody."""
        listing = self._listing(listing_id)
        if amount_in <= 0:
            raise OperationError("bad_amount", "deposits must be positive")
        if listing.source_asset == "native":
            payload = {"amount": amount_in}
            kind = "transfer_native"
        else:
            payload = {"token": listing.source_asset, "amount": amount_in}
            kind = "transfer_token"
        tx = self.source.make_tx(user_pubkey, self.custody_source, kind, payload)
        self.source.submit_or_raise(tx, operator_pass=True)
        block = self.source.produce_block()
        if tx.tx_id not in {t.tx_id for t in block.tx_list}:
            reason = dict(self.source.drop_log).get(tx.tx_id, "deposit_failed")
            raise OperationError(reason, "deposit did not commit")
        net, kept = self.quote(listing_id, amount_in)
        receipt = SwapReceipt(
            listing_id=listing_id,
            sender=tx.sender,
            destination="",
            amount_in=amount_in,
            gross_out=net + kept,
            amount_out=net,
            commission_kept=kept,
            deposit_tx=tx.tx_id,
            deposit_block=block.number,
            fee_paid=tx.fee_offered,
        )
        self.receipts.append(receipt)
        return receipt

    def settle(self, receipt: SwapReceipt, destination: str) -> SwapReceipt:
        """Second leg: pay out on the target chain.  Requires the deposit
        block to be final on the source chain first."""
        if receipt.status != PENDING:
            raise OperationError("already_settled", receipt.deposit_tx)
        if not self.source.finality_reached(receipt.deposit_block):
            raise OperationError(
                "not_final",
                f"deposit block {receipt.deposit_block} is not final at head {self.source.head}",
            )
        listing = self._listing(receipt.listing_id)
        dest_acct = self.target.get_account(destination)
        if dest_acct is None:
            raise OperationError("missing_destination", f"{destination} does not exist")
        desk = self.target.get_account(self.custody_target)
        fee = self.target.config.tx_fee
        if listing.target_asset == "native":
            held = desk.native if desk else 0
            if held < receipt.amount_out + fee:
                raise OperationError("unfunded_custody", "target custody cannot cover the payout")
            payload = {"amount": receipt.amount_out}
            kind = "transfer_native"
        else:
            held = desk.tokens.get(listing.target_asset, 0) if desk else 0
            native = desk.native if desk else 0
            if held < receipt.amount_out or native < fee:
                raise OperationError("unfunded_custody", "target custody cannot cover the payout")
            payload = {"token": listing.target_asset, "amount": receipt.amount_out}
            kind = "transfer_token"
        tx = self.target.make_tx(self.desk_key, destination, kind, payload)
        self.target.submit_or_raise(tx, operator_pass=True)
        block = self.target.produce_block()
        if tx.tx_id not in {t.tx_id for t in block.tx_list}:
            reason = dict(self.target.drop_log).get(tx.tx_id, "payout_failed")
            raise OperationError(reason, "payout did not commit")
        settled = replace(
            receipt,
            destination=destination,
            payout_tx=tx.tx_id,
            status=SETTLED,
            fee_paid=receipt.fee_paid + tx.fee_offered,
        )
        self.receipts[self.receipts.index(receipt)] = settled
        return settled

    def swap(self, user_pubkey: str, listing_id: str, amount_in: int, destination: str) -> SwapReceipt:
        """Deposit, drive the source chain to finality, then settle."""
        receipt = self.deposit(user_pubkey, listing_id, amount_in)
        self.source.advance_until_final(receipt.deposit_block)
        return self.settle(receipt, destination)

    def commission_balance(self, listing_id: str) -> int:
        return sum(
            r.commission_kept for r in self.receipts if r.listing_id == listing_id and r.status == SETTLED
        )

    def wrapped_native_id(self) -> str:
        """Token id of the desk-issued wrapper for the source chain's native asset."""
        return f"wrapped:{self.source.chain_id}:native"

    def tokenize_native(self, user_pubkey: str, amount: int) -> dict:
        """Wrap `amount` native units as a desk-issued token, 1:1.

        The user deposits native into source custody and the desk mints
        the wrapper back; the first mint registers the desk as issuer.
        Lets unlisted native value move through a listed wrapper."""
        if amount <= 0:
            raise OperationError("bad_amount", "tokenized amounts must be positive")
        source = self.source
        fee = source.config.tx_fee
        custody = source.get_account(self.custody_source)
        if custody is None or custody.public_key is None:
            raise OperationError(
                "unfunded_custody", "source custody cannot sign; introduce the desk account first"
            )
        if custody.native + amount < fee:
            raise OperationError("unfunded_custody", "custody cannot pay the wrapper mint fee")
        holder = source.address_for(user_pubkey)
        deposit = source.make_tx(user_pubkey, self.custody_source, "transfer_native", {"amount": amount})
        source.submit_or_raise(deposit, operator_pass=True)
        block = source.produce_block()
        if deposit.tx_id not in {t.tx_id for t in block.tx_list}:
            reason = dict(source.drop_log).get(deposit.tx_id, "deposit_failed")
            raise OperationError(reason, "wrapper deposit did not commit")
        wrapper = self.wrapped_native_id()
        mint = source.make_tx(
            self.desk_key, holder, "transfer_token", {"token": wrapper, "amount": amount, "mint": True}
        )
        source.submit_or_raise(mint, operator_pass=True)
        block = source.produce_block()
        if mint.tx_id not in {t.tx_id for t in block.tx_list}:
            reason = dict(source.drop_log).get(mint.tx_id, "mint_failed")
            raise OperationError(reason, "wrapper mint did not commit")
        return {
            "token": wrapper,
            "amount": amount,
            "holder": holder,
            "deposit_tx": deposit.tx_id,
            "mint_tx": mint.tx_id,
        }


def transfer_via_exchange(desk: ExchangeDesk, from_spec, to_spec) -> SwapReceipt:
    """Move value in one call: (chain, address, asset, amount) -> (chain, address, asset).

    The sending address must be spendable through the desk's registry and
    the destination account must already exist; both are checked before
    any chain is touched, so a refused transfer leaves no half-done legs."""
    from_chain, from_address, from_asset, amount = from_spec
    to_chain, to_address, to_asset = to_spec
    if from_chain != desk.source.chain_id or to_chain != desk.target.chain_id:
        raise OperationError("unknown_listing", "desk moves value from its source chain to its target chain only")
    listing = desk.listing_for(from_asset, to_asset)
    acct = desk.source.get_account(from_address)
    fee = desk.source.config.tx_fee
    if from_asset == "native":
        held = acct.native if acct else 0
        need = amount + fee
    else:
        held = acct.tokens.get(from_asset, 0) if acct else 0
        need = amount
        if (acct.native if acct else 0) < fee:
            raise OperationError("insufficient_funds", f"{from_address} cannot cover the deposit fee")
    if held < need:
        raise OperationError("insufficient_funds", f"{from_address} holds {held} {from_asset}, needs {need}")
    if desk.target.get_account(to_address) is None:
        raise OperationError("missing_destination", f"no account {to_address} on {to_chain}")
    if acct.public_key is None or not desk.registry.has_key(acct.public_key):
        raise OperationError("insufficient_funds", f"no signing key for {from_address}; its balance cannot be spent")
    return desk.swap(acct.public_key, listing.listing_id, amount, to_address)
