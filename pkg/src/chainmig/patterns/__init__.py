"""Migration moves, each a function from live chains to a report dict.

Capture-side moves read or quiesce the source chain (snapshot, balance
aggregation, burning, mapping tables).  Load-side moves build up the
target (genesis establishment, hard forks, state initialization, node
sync).  Replay, sharding, contract migration, exchange transfer, and
the cross-cutting quality / provenance / privacy helpers round out the
set.  Reports are plain JSON-able dicts so the batch runner can write
them into bundles unchanged.
"""

from .capture import (
    MappingTable,
    aggregate_balances,
    burn_scope,
    disaggregate_balances,
    take_snapshot,
    update_mapping,
)
from .contract_migration import (
    emulation_trace_report,
    migrate_contract,
    translate_contract,
    verify_translation,
    vm_emulate,
)
from .exchange_move import exchange_transfer_scope
from .load import (
    announce_soft_fork,
    clone_chain,
    establish_genesis,
    hard_fork,
    state_initialization,
    sync_replica,
)
from .poe import PoEStore, anchor_digest, anchored_digests, audit_store
from .privacy import (
    decrypt_payload,
    decrypt_state,
    derive_sealing_key,
    encrypt_payload,
    encrypt_state,
    seal_and_anchor,
)
from .quality import app_state_fingerprint, measure_quality
from .replay import dependency_groups, replay_transactions
from .shard import (
    ShardedDeployment,
    cross_shard_count,
    partition_by_account_prefix,
    partition_by_node_location,
    partition_by_tx_affinity,
    shard_chain,
)

__all__ = [
    "MappingTable",
    "PoEStore",
    "ShardedDeployment",
    "aggregate_balances",
    "anchor_digest",
    "anchored_digests",
    "announce_soft_fork",
    "app_state_fingerprint",
    "audit_store",
    "burn_scope",
    "clone_chain",
    "cross_shard_count",
    "decrypt_payload",
    "decrypt_state",
    "derive_sealing_key",
    "dependency_groups",
    "disaggregate_balances",
    "emulation_trace_report",
    "encrypt_payload",
    "encrypt_state",
    "establish_genesis",
    "exchange_transfer_scope",
    "hard_fork",
    "measure_quality",
    "migrate_contract",
    "partition_by_account_prefix",
    "partition_by_node_location",
    "partition_by_tx_affinity",
    "replay_transactions",
    "seal_and_anchor",
    "shard_chain",
    "state_initialization",
    "sync_replica",
    "take_snapshot",
    "translate_contract",
    "update_mapping",
    "verify_translation",
    "vm_emulate",
]
