"""Split one chain into several, with routed cross-shard transfers.

Three partition policies: by address prefix (cheap, blind to usage),
by transaction affinity (union-find co-occurrence clusters, so accounts
that transact together land together), and by node location pinning.
Each shard runs as its own chain seeded from the matching slice of the
snapshot; value crosses shards through per-shard bridge accounts with
a lock leg on the sender's shard and a release leg on the receiver's.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import OperationError
from ..ledger import ChainConfig, ChainInstance, KeyRegistry
from .capture import MappingTable
from .load import establish_genesis
from .replay import dependency_groups


def partition_by_account_prefix(addresses, shard_count: int) -> dict[str, int]:
    """First address nibble modulo the shard count."""
    if shard_count < 1:
        raise OperationError("empty_group", "need at least one shard")
    return {address: int(address[0], 16) % shard_count for address in addresses}


def partition_by_tx_affinity(
    records: list[dict], addresses, shard_count: int, source_scheme: str = "long"
) -> dict[str, int]:
    """Cluster accounts that co-occur in transactions, then pack whole
    clusters onto the currently lightest shard (largest clusters first).
    Accounts with no history fall back to their own singleton cluster."""
    if shard_count < 1:
        raise OperationError("empty_group", "need at least one shard")
    groups = dependency_groups(records, source_scheme)
    address_pool = set(addresses)
    clusters: list[list[str]] = []
    seen: set[str] = set()
    for group in groups:
        members: set[str] = set()
        for record in group:
            members.add(record["sender"])
            members.add(record["receiver"])
        members &= address_pool
        members -= seen
        if members:
            clusters.append(sorted(members))
            seen |= members
    for address in sorted(address_pool - seen):
        clusters.append([address])

    clusters.sort(key=lambda c: (-len(c), c[0]))
    loads = [0] * shard_count
    assignment: dict[str, int] = {}
    for cluster in clusters:
        shard = min(range(shard_count), key=lambda i: (loads[i], i))
        for address in cluster:
            assignment[address] = shard
        loads[shard] += len(cluster)
    return assignment


def partition_by_node_location(
    addresses, pinning: dict[str, str], locations: list[str]
) -> dict[str, int]:
    """Pin addresses to the shard hosting their declared location;
    unpinned addresses fall back to the prefix rule."""
    if not locations:
        raise OperationError("empty_group", "need at least one location")
    index = {location: i for i, location in enumerate(locations)}
    fallback = partition_by_account_prefix(addresses, len(locations))
    assignment = {}
    for address in addresses:
        location = pinning.get(address)
        if location is not None:
            if location not in index:
                raise OperationError("empty_group", f"unknown location {location!r}")
            assignment[address] = index[location]
        else:
            assignment[address] = fallback[address]
    return assignment


def cross_shard_count(records: list[dict], assignment: dict[str, int]) -> int:
    """How many captured transactions would straddle two shards."""
    count = 0
    for record in records:
        sender_shard = assignment.get(record["sender"])
        receiver_shard = assignment.get(record["receiver"])
        if sender_shard is None or receiver_shard is None:
            continue
        if sender_shard != receiver_shard:
            count += 1
    return count


@dataclass
class ShardedDeployment:
    shards: list[ChainInstance]
    assignment: dict[str, int]
    bridge_keys: list[str]
    mapping: MappingTable
    routing_records: list[dict] = field(default_factory=list)

    def shard_of(self, source_address: str) -> int:
        shard = self.assignment.get(source_address)
        if shard is None:
            raise OperationError("unroutable_tx", f"{source_address[:12]} has no shard")
        return shard

    def bridge_address(self, shard: int) -> str:
        return self.shards[shard].address_for(self.bridge_keys[shard])

    def local_address(self, source_address: str, shard: int) -> str:
        entry = self.mapping.by_ref(f"shard:{source_address}")
        if entry is not None and entry.target_id.startswith(f"{shard}:"):
            return entry.target_id.split(":", 1)[1]
        return source_address

    def route_transfer(self, sender_pubkey: str, receiver_source: str, amount: int) -> dict:
        """Move native value between accounts, bridging when they live
        on different shards: lock into the sender-side bridge, release
        from the receiver-side bridge's float."""
        sender_shard = None
        sender_local = None
        for i, shard in enumerate(self.shards):
            address = shard.address_for(sender_pubkey)
            if self.assignment.get(address) == i or shard.get_account(address) is not None:
                sender_shard, sender_local = i, address
                break
        if sender_shard is None:
            raise OperationError("unroutable_tx", "sender lives on no shard")
        receiver_shard = self.shard_of(receiver_source)
        receiver_local = self.local_address(receiver_source, receiver_shard)

        if sender_shard == receiver_shard:
            chain = self.shards[sender_shard]
            tx = chain.make_tx(sender_pubkey, receiver_local, "transfer_native", {"amount": amount})
            chain.submit_or_raise(tx, operator_pass=True)
            chain.produce_block()
            record = {
                "kind": "routing_record",
                "cross_shard": False,
                "shard": sender_shard,
                "tx": tx.tx_id,
                "amount": amount,
            }
            self.routing_records.append(record)
            return record

        lock_chain = self.shards[sender_shard]
        release_chain = self.shards[receiver_shard]
        release_fee = release_chain.config.tx_fee
        bridge_out = release_chain.get_account(self.bridge_address(receiver_shard))
        available = bridge_out.native if bridge_out else 0
        if available - release_chain._pending_native_spend(self.bridge_address(receiver_shard)) < amount + release_fee:
            raise OperationError(
                "bridge_unfunded",
                f"shard {receiver_shard} bridge cannot release {amount}",
            )
        lock_tx = lock_chain.make_tx(
            sender_pubkey, self.bridge_address(sender_shard), "transfer_native", {"amount": amount}
        )
        lock_chain.submit_or_raise(lock_tx, operator_pass=True)
        lock_block = lock_chain.produce_block()
        lock_chain.advance_until_final(lock_block.number)
        release_tx = release_chain.make_tx(
            self.bridge_keys[receiver_shard], receiver_local, "transfer_native", {"amount": amount}
        )
        release_chain.submit_or_raise(release_tx, operator_pass=True)
        release_chain.produce_block()
        record = {
            "kind": "routing_record",
            "cross_shard": True,
            "from_shard": sender_shard,
            "to_shard": receiver_shard,
            "lock_tx": lock_tx.tx_id,
            "release_tx": release_tx.tx_id,
            "amount": amount,
        }
        self.routing_records.append(record)
        return record

    def global_native_total(self) -> int:
        return sum(
            sum(acct.native for acct in shard.state.accounts.values()) for shard in self.shards
        )

    def report(self) -> dict:
        sizes: dict[int, int] = {}
        for shard in self.assignment.values():
            sizes[shard] = sizes.get(shard, 0) + 1
        return {
            "kind": "shard_report",
            "shards": [shard.chain_id for shard in self.shards],
            "assignment_sizes": {str(k): v for k, v in sorted(sizes.items())},
            "bridges": [self.bridge_address(i) for i in range(len(self.shards))],
            "routing_records": self.routing_records,
            "cross_shard_routed": sum(1 for r in self.routing_records if r.get("cross_shard")),
        }


def shard_chain(
    source: ChainInstance,
    snapshot: dict,
    assignment: dict[str, int],
    registry: KeyRegistry,
    shard_count: int | None = None,
    bridge_float: int = 0,
    announce: bool = True,
) -> ShardedDeployment:
    """Deploy one chain per shard, each seeded from its slice of the
    snapshot, with a funded bridge account for cross-shard release.
    Announces the routing rule change on the source as a soft fork."""
    if shard_count is None:
        shard_count = max(assignment.values(), default=-1) + 1
    if shard_count < 1:
        raise OperationError("empty_group", "need at least one shard")
    mapping = MappingTable()
    shards: list[ChainInstance] = []
    bridge_keys: list[str] = []
    base = source.config

    for i in range(shard_count):
        chain_id = f"{base.chain_id}-s{i}"
        bridge_key = registry.create_key_from_label(f"bridge:{chain_id}")
        bridge_keys.append(bridge_key)
        sub_accounts = {
            address: rec
            for address, rec in snapshot.get("accounts", {}).items()
            if assignment.get(address) == i
        }
        if bridge_float:
            from ..ledger import derive_address

            bridge_address = derive_address(bridge_key, base.id_scheme)
            sub_accounts[bridge_address] = {
                "public_key": bridge_key,
                "native": bridge_float,
                "tokens": {},
            }
        sub_contracts = {
            address: rec
            for address, rec in snapshot.get("contracts", {}).items()
            if assignment.get(address) == i
        }
        sub_snapshot = {
            "accounts": sub_accounts,
            "contracts": sub_contracts,
            "contract_states": {
                address: rec
                for address, rec in snapshot.get("contract_states", {}).items()
                if address in sub_contracts
            },
            "token_issuers": snapshot.get("token_issuers", {}),
            "digest": snapshot.get("digest", ""),
        }
        config = ChainConfig(
            chain_id=chain_id,
            permission_mode="private",
            id_scheme=base.id_scheme,
            signature_scheme=base.signature_scheme,
            tx_fee=base.tx_fee,
            finality_depth=base.finality_depth,
            block_capacity=base.block_capacity,
            vm_dialect=base.vm_dialect,
            allows_hard_fork=base.allows_hard_fork,
            allows_genesis_control=True,
        )
        shard, _ = establish_genesis(sub_snapshot, config, registry, mapping=None)
        shards.append(shard)
        for address in sub_accounts:
            if bridge_float and address == shard.address_for(bridge_key):
                continue
            rec = sub_accounts[address]
            local = shard.address_for(rec["public_key"]) if rec.get("public_key") else address
            mapping.add(f"shard:{address}", "account", address, f"{i}:{local}", f"shard_{i}")

    if announce:
        from .load import announce_soft_fork

        announce_soft_fork(source, "shard-routing")
    return ShardedDeployment(
        shards=shards, assignment=dict(assignment), bridge_keys=bridge_keys, mapping=mapping
    )
