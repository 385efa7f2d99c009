"""Move in-scope holdings through an exchange desk.

The no-control route: when neither genesis nor forks nor replay are on
the table (public or baas targets), value walks across as ordinary
swaps.  Each keyed account deposits its spendable balance; the desk
pays out on the target at the listed rate once the deposit is final.
Dust below the fee floor cannot move and is reported, not hidden.
"""

from __future__ import annotations

from ..errors import OperationError
from ..exchange import ExchangeDesk
from .capture import MappingTable


def exchange_transfer_scope(
    desk: ExchangeDesk,
    listing_id: str,
    scope="all",
    mapping: MappingTable | None = None,
    destination_for: dict[str, str] | None = None,
) -> dict:
    """Swap every in-scope keyed account's spendable native balance.

    Destinations come from `destination_for`, else the mapping table,
    else the same public key's address on the target chain.  The
    destination account must already exist there (settlement refuses
    to pay into a void).  When the listing trades the desk's wrapper
    token rather than native, each balance is tokenized first; the
    extra deposit leg costs one more fee per account."""
    source = desk.source
    target = desk.target
    listing = desk._listing(listing_id)
    tokenize = listing.source_asset == desk.wrapped_native_id()
    fee = source.config.tx_fee
    overhead = 2 * fee if tokenize else fee
    receipts = []
    skipped = []

    for address in source.app_addresses(scope):
        if address in source.state.contracts:
            skipped.append({"address": address, "reason": "contract_custody"})
            continue
        if address in (desk.custody_source, desk.custody_target):
            continue
        acct = source.state.accounts.get(address)
        if acct is None or acct.native == 0:
            continue
        if acct.public_key is None or not source.registry.has_key(acct.public_key):
            skipped.append({"address": address, "reason": "missing_key", "native": acct.native})
            continue
        spendable = acct.native - overhead
        if spendable <= 0:
            skipped.append(
                {"address": address, "reason": "below_fee_floor", "native": acct.native}
            )
            continue
        if destination_for is not None and address in destination_for:
            destination = destination_for[address]
        elif mapping is not None and mapping.by_source(address) is not None:
            destination = mapping.by_source(address).target_id
        else:
            destination = target.address_for(acct.public_key)
        if tokenize:
            desk.tokenize_native(acct.public_key, spendable)
        receipt = desk.swap(acct.public_key, listing_id, spendable, destination)
        receipts.append(receipt.record())
        if mapping is not None and mapping.by_source(address) is None:
            mapping.add(f"account:{address}", "account", address, destination, "exchange_swap")

    return {
        "kind": "exchange_report",
        "listing_id": listing_id,
        "source_chain_id": source.chain_id,
        "target_chain_id": target.chain_id,
        "tokenized": tokenize,
        "swaps": len(receipts),
        "receipts": receipts,
        "skipped": skipped,
        "commission_kept": desk.commission_balance(listing_id),
    }
