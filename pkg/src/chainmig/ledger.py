"""Deterministic toy blockchain: accounts, tokens, contracts, blocks.

One proposer, no forks: `produce_block` selects pooled transactions by
(fee desc, tx_id asc), applies them, and appends a block whose number is
the only clock in the system.  A block is final once it is
`finality_depth` blocks behind the head.  Fees are burned to a reserved
fee-sink account, so the sum of native balances over every account
(sinks included) is invariant apart from genesis allocation and explicit
hard-fork injections; that conservation check runs after every block.

Signatures are deliberately toy: sign(tx) = SHA-256(scheme_tag || seed ||
tx_id), verified against a key registry.  Two scheme tags never verify
each other's signatures.  Transaction ids commit to the chain id, so the
same logical transfer has different ids on different chains.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field, replace
from functools import cached_property

from . import contracts as vm
from .canonical import (
    SCHEMA_VERSION,
    canonical_json,
    enc_bytes,
    enc_int,
    enc_str,
    hexdigest,
)
from .errors import OperationError

TX_KINDS = (
    "transfer_native",
    "transfer_token",
    "create_account",
    "deploy_contract",
    "call_contract",
    "poe_anchor",
    "burn",
)

ID_SCHEMES = ("long", "truncated")
SIGNATURE_SCHEMES = ("sigA", "sigB")
PERMISSION_MODES = ("public", "private", "consortium", "baas")
VM_DIALECT_MODES = ("dialectA", "dialectB", "emulating")

_SCHEME_TAG = {"sigA": b"sigA:", "sigB": b"sigB:"}
_CONTRACT_TAG = b"contract:"

_ADDR_BYTES = {"long": 32, "truncated": 20}


def burn_sink(id_scheme: str) -> str:
    """The all-zeros address; no key can ever be registered for it."""
    return "00" * _ADDR_BYTES[id_scheme]


def fee_sink(id_scheme: str) -> str:
    return "ff" * _ADDR_BYTES[id_scheme]


def derive_address(public_key: str, id_scheme: str) -> str:
    """Address = digest of the public key: full 256 bits for `long`,
    rightmost 160 bits for `truncated`."""
    if id_scheme not in _ADDR_BYTES:
        raise OperationError("unknown_scheme", f"no id scheme {id_scheme!r}")
    key_bytes = bytes.fromhex(public_key)
    if not any(key_bytes):
        raise OperationError("zero_key", "the zero key has no address")
    digest = hashlib.sha256(key_bytes).digest()
    if id_scheme == "long":
        return digest.hex()
    return digest[-20:].hex()


def contract_address(deployer: str, nonce: int, id_scheme: str) -> str:
    digest = hashlib.sha256(
        b"contract:" + bytes.fromhex(deployer) + nonce.to_bytes(8, "big")
    ).digest()
    return digest.hex() if id_scheme == "long" else digest[-20:].hex()


def int_to_address(value: int, id_scheme: str) -> str:
    width = _ADDR_BYTES[id_scheme]
    return (value % (1 << (8 * width))).to_bytes(width, "big").hex()


@dataclass(frozen=True)
class ChainConfig:
    chain_id: str
    permission_mode: str = "private"
    id_scheme: str = "long"
    signature_scheme: str = "sigA"
    tx_fee: int = 0
    finality_depth: int = 1
    block_capacity: int = 100
    vm_dialect: str = "dialectA"
    allows_hard_fork: bool = False
    allows_genesis_control: bool = True

    def __post_init__(self):
        if self.permission_mode not in PERMISSION_MODES:
            raise OperationError("bad_config", f"permission_mode {self.permission_mode!r}")
        if self.id_scheme not in ID_SCHEMES:
            raise OperationError("bad_config", f"id_scheme {self.id_scheme!r}")
        if self.signature_scheme not in SIGNATURE_SCHEMES:
            raise OperationError("bad_config", f"signature_scheme {self.signature_scheme!r}")
        if self.vm_dialect not in VM_DIALECT_MODES:
            raise OperationError("bad_config", f"vm_dialect {self.vm_dialect!r}")
        if self.tx_fee < 0 or self.finality_depth < 0 or self.block_capacity < 1:
            raise OperationError("bad_config", "negative fee/finality or empty blocks")
        if self.permission_mode == "baas" and self.allows_genesis_control:
            raise OperationError("bad_config", "a baas chain never grants genesis control")

    def to_record(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "permission_mode": self.permission_mode,
            "id_scheme": self.id_scheme,
            "signature_scheme": self.signature_scheme,
            "tx_fee": self.tx_fee,
            "finality_depth": self.finality_depth,
            "block_capacity": self.block_capacity,
            "vm_dialect": self.vm_dialect,
            "allows_hard_fork": self.allows_hard_fork,
            "allows_genesis_control": self.allows_genesis_control,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ChainConfig":
        return cls(**record)


def compatible_platforms(a: ChainConfig, b: ChainConfig) -> bool:
    """Same config family: node-level data structures interoperate."""
    return (
        a.id_scheme == b.id_scheme
        and a.signature_scheme == b.signature_scheme
        and a.vm_dialect == b.vm_dialect
    )


class KeyRegistry:
    """Toy key custody: public key -> 256-bit private seed."""

    def __init__(self):
        self._seeds: dict[str, str] = {}

    def create_key(self, rng) -> str:
        seed = rng.getrandbits(256).to_bytes(32, "big")
        return self.register_seed(seed.hex())

    def create_key_from_label(self, label: str) -> str:
        seed = hashlib.sha256(b"seed:" + label.encode("utf-8")).hexdigest()
        return self.register_seed(seed)

    def register_seed(self, seed: str) -> str:
        public_key = hashlib.sha256(b"pubkey:" + bytes.fromhex(seed)).hexdigest()
        self._seeds[public_key] = seed
        return public_key

    def adopt(self, other: "KeyRegistry", public_keys=None) -> None:
        for pk, seed in other._seeds.items():
            if public_keys is None or pk in public_keys:
                self._seeds[pk] = seed

    def has_key(self, public_key: str) -> bool:
        return public_key in self._seeds

    def public_keys(self):
        return set(self._seeds)

    def export_seeds(self) -> dict[str, str]:
        """Toy seeds are reproducibility data, not secrets: auditors
        need them to re-verify signatures during replay."""
        return dict(sorted(self._seeds.items()))

    def sign(self, scheme: str, public_key: str, tx_id: str) -> str:
        seed = self._seeds.get(public_key)
        if seed is None:
            raise OperationError("unknown_key", "no seed registered for this key")
        return hexdigest(_SCHEME_TAG[scheme] + bytes.fromhex(seed) + bytes.fromhex(tx_id))

    def verify(self, scheme: str, public_key: str, tx_id: str, signature: str) -> bool:
        seed = self._seeds.get(public_key)
        if seed is None:
            return False
        expected = hexdigest(_SCHEME_TAG[scheme] + bytes.fromhex(seed) + bytes.fromhex(tx_id))
        return expected == signature


def contract_signature(tx_id: str) -> str:
    return hexdigest(_CONTRACT_TAG + bytes.fromhex(tx_id))


@dataclass(frozen=True)
class Transaction:
    chain_id: str
    sender: str
    receiver: str
    nonce: int
    kind: str
    payload: bytes
    fee_offered: int
    signature: str = ""

    @cached_property
    def tx_id(self) -> str:
        return hexdigest(
            enc_str(self.sender)
            + enc_str(self.receiver)
            + enc_int(self.nonce, 8)
            + enc_str(self.kind)
            + enc_bytes(self.payload)
            + enc_int(self.fee_offered, 16)
            + enc_str(self.chain_id)
        )

    def payload_obj(self):
        import json

        return json.loads(self.payload.decode("utf-8")) if self.payload else {}

    def record(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "sender": self.sender,
            "receiver": self.receiver,
            "nonce": self.nonce,
            "kind": self.kind,
            "payload": self.payload_obj(),
            "fee_offered": self.fee_offered,
            "signature": self.signature,
            "tx_id": self.tx_id,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Transaction":
        return cls(
            chain_id=record["chain_id"],
            sender=record["sender"],
            receiver=record["receiver"],
            nonce=record["nonce"],
            kind=record["kind"],
            payload=canonical_json(record["payload"]),
            fee_offered=record["fee_offered"],
            signature=record["signature"],
        )


@dataclass(frozen=True)
class SubmitResult:
    accepted: bool
    reason: str | None = None
    tx_id: str | None = None

    def __bool__(self) -> bool:
        return self.accepted


@dataclass(frozen=True)
class Block:
    number: int
    parent_digest: str
    timestamp: int  # logical tick == block number
    tx_list: tuple[Transaction, ...]
    state_root: str
    annotation: str = ""
    injected: tuple = ()  # hard-fork state injections, part of consensus bytes
    touched: tuple = ()  # ((tx_id, (addr, ...)), ...): derived bookkeeping

    @cached_property
    def digest(self) -> str:
        body = (
            enc_int(self.number, 8)
            + bytes.fromhex(self.parent_digest)
            + enc_int(self.timestamp, 8)
            + enc_str(self.annotation)
            + enc_bytes(canonical_json(list(self.injected)))
            + enc_int(len(self.tx_list), 4)
        )
        for tx in self.tx_list:
            body += bytes.fromhex(tx.tx_id)
        body += bytes.fromhex(self.state_root)
        return hexdigest(body)

    def record(self, include_touched: bool = True) -> dict:
        rec = {
            "number": self.number,
            "parent_digest": self.parent_digest,
            "timestamp": self.timestamp,
            "txs": [tx.record() for tx in self.tx_list],
            "state_root": self.state_root,
            "annotation": self.annotation,
            "injected": list(self.injected),
            "digest": self.digest,
        }
        if include_touched:
            rec["touched"] = [[tx_id, list(addrs)] for tx_id, addrs in self.touched]
        return rec


@dataclass
class Account:
    address: str
    public_key: str | None = None
    nonce: int = 0
    native: int = 0
    tokens: dict[str, int] = field(default_factory=dict)

    def record(self) -> dict:
        return {
            "public_key": self.public_key or "",
            "nonce": self.nonce,
            "native": self.native,
            "tokens": {t: v for t, v in sorted(self.tokens.items()) if v},
        }


@dataclass
class GlobalState:
    accounts: dict[str, Account] = field(default_factory=dict)
    contracts: dict[str, vm.DeployedContract] = field(default_factory=dict)
    contract_states: dict[str, vm.ContractState] = field(default_factory=dict)
    token_issuers: dict[str, str] = field(default_factory=dict)

    def canonical_bytes(self) -> bytes:
        """Entries sorted by address bytes, declared field order, big-endian
        fixed-width integers: the byte form every state digest is over."""
        out = bytearray()
        addresses = set(self.accounts) | set(self.contracts) | set(self.contract_states)
        for address in sorted(addresses, key=bytes.fromhex):
            acct = self.accounts.get(address)
            if acct is not None:
                out += b"A"
                out += enc_str(address)
                out += enc_str(acct.public_key or "")
                out += enc_int(acct.nonce, 8)
                out += enc_int(acct.native, 16)
                live_tokens = [(t, v) for t, v in sorted(acct.tokens.items()) if v]
                out += enc_int(len(live_tokens), 4)
                for token, value in live_tokens:
                    out += enc_str(token)
                    out += enc_int(value, 16)
            deployed = self.contracts.get(address)
            if deployed is not None:
                out += b"C"
                out += enc_str(address)
                out += enc_str(deployed.code.dialect)
                out += enc_bytes(deployed.code.bytecode)
                out += enc_str(deployed.owner)
                out += enc_bytes(
                    canonical_json(
                        {
                            "entrypoints": deployed.code.entrypoints,
                            "entry_arity": deployed.code.entry_arity,
                        }
                    )
                )
            cstate = self.contract_states.get(address)
            if cstate is not None:
                out += b"S"
                out += enc_str(address)
                out += enc_str(cstate.status)
                live_slots = [(k, v) for k, v in sorted(cstate.storage.items()) if v]
                out += enc_int(len(live_slots), 4)
                for slot, value in live_slots:
                    out += enc_int(slot, 32)
                    out += enc_int(value, 32)
                out += enc_int(len(cstate.known_keys), 4)
                for key in sorted(cstate.known_keys):
                    out += enc_int(key, 32)
        out += b"T"
        out += enc_int(len(self.token_issuers), 4)
        for token, issuer in sorted(self.token_issuers.items()):
            out += enc_str(token)
            out += enc_str(issuer)
        return bytes(out)

    def digest(self) -> str:
        return hexdigest(self.canonical_bytes())

    def get_or_create(self, address: str, public_key: str | None = None) -> Account:
        acct = self.accounts.get(address)
        if acct is None:
            acct = Account(address=address, public_key=public_key)
            self.accounts[address] = acct
        elif public_key and acct.public_key is None:
            acct.public_key = public_key
        return acct


@dataclass(frozen=True)
class Freeze:
    at_block: int
    scope: frozenset[str] | str  # "all" or an address set

    def covers(self, tx: Transaction, block_number: int) -> bool:
        if block_number < self.at_block:
            return False
        if self.scope == "all":
            return True
        return tx.sender in self.scope or tx.receiver in self.scope


@dataclass
class NodeReplica:
    node_id: str
    location: str = ""
    local_blocks: list[Block] = field(default_factory=list)
    local_state: GlobalState | None = None
    synced_up_to: int = -1
    accepts_txs: bool = False
    carries_update: bool = True


@dataclass
class DeltaEntry:
    address: str
    record: dict
    tx_ids: list[str]


class _ApplyError(Exception):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


class ChainInstance:
    """A single chain: config, key registry, canonical blocks, mempool."""

    def __init__(self, config: ChainConfig, registry: KeyRegistry, genesis_doc: dict):
        self.config = config
        self.registry = registry
        self.genesis_doc = genesis_doc
        self.state = GlobalState()
        self.mempool: list[Transaction] = []
        self.nodes: dict[str, NodeReplica] = {}
        self.freezes: list[Freeze] = []
        self.drop_log: list[tuple[str, str]] = []
        self.operator_tx_ids: set[str] = set()
        self.traces: dict[str, vm.VmTrace] = {}
        self._injected_native = 0
        self._lock = threading.RLock()
        self._emit_queue: list[Transaction] = []
        self._load_genesis(genesis_doc)
        genesis = Block(
            number=0,
            parent_digest="00" * 32,
            timestamp=0,
            tx_list=(),
            state_root=self.state.digest(),
            annotation="genesis",
        )
        self.blocks: list[Block] = [genesis]
        self._check_conservation()

    # -- construction -------------------------------------------------

    @classmethod
    def from_genesis_doc(cls, doc: dict, registry: KeyRegistry) -> "ChainInstance":
        config = ChainConfig.from_record(doc["config"])
        return cls(config, registry, doc)

    def _load_genesis(self, doc: dict) -> None:
        scheme = self.config.id_scheme
        self.state.get_or_create(burn_sink(scheme))
        self.state.get_or_create(fee_sink(scheme))
        for address, alloc in sorted(doc.get("allocations", {}).items()):
            public_key = alloc.get("public_key") or None
            if public_key and derive_address(public_key, scheme) != address:
                raise OperationError(
                    "bad_genesis", f"address {address} does not match its public key"
                )
            acct = self.state.get_or_create(address, public_key)
            acct.native += int(alloc.get("native", 0))
            for token, value in alloc.get("tokens", {}).items():
                acct.tokens[token] = acct.tokens.get(token, 0) + int(value)
        for token, issuer in doc.get("token_issuers", {}).items():
            self.state.token_issuers[token] = issuer
        for address, spec in sorted(doc.get("contracts", {}).items()):
            code = vm.ContractCode(
                dialect=spec["dialect"],
                bytecode=bytes.fromhex(spec["bytecode"]) if "bytecode" in spec else b"",
                source=spec.get("source"),
                entrypoints=dict(spec.get("entrypoints", {})),
                entry_arity=dict(spec.get("entry_arity", {})),
            )
            if code.source is not None and not code.bytecode:
                code = vm.assemble(code.source, code.dialect)
            vm.validate_code(code)
            if code.dialect not in vm.executable_dialects(self.config.vm_dialect):
                raise OperationError("bad_genesis", "genesis contract dialect mismatch")
            self.state.get_or_create(address)
            self.state.contracts[address] = vm.DeployedContract(
                code=code, owner=spec.get("owner", burn_sink(scheme))
            )
            cstate = vm.ContractState(contract_address=address)
            for key_str, value in spec.get("storage_logical", {}).items():
                key = int(key_str)
                cstate.storage[vm.slot_hash(code.dialect, key)] = int(value)
                cstate.known_keys.add(key)
            for slot_hex, value in spec.get("storage", {}).items():
                cstate.storage[int(slot_hex, 16)] = int(value)
            cstate.known_keys.update(int(k) for k in spec.get("known_keys", []))
            cstate.status = spec.get("status", vm.STATUS_ACTIVE)
            self.state.contract_states[address] = cstate

    # -- basic views ----------------------------------------------------

    @property
    def head(self) -> int:
        return self.blocks[-1].number

    @property
    def chain_id(self) -> str:
        return self.config.chain_id

    def genesis_native_supply(self) -> int:
        return sum(
            int(a.get("native", 0)) for a in self.genesis_doc.get("allocations", {}).values()
        )

    def expected_native_supply(self) -> int:
        return self.genesis_native_supply() + self._injected_native

    def address_for(self, public_key: str) -> str:
        return derive_address(public_key, self.config.id_scheme)

    def get_account(self, address: str) -> Account | None:
        return self.state.accounts.get(address)

    def balance(self, address: str, asset: str = "native") -> int:
        acct = self.state.accounts.get(address)
        if acct is None:
            return 0
        if asset == "native":
            return acct.native
        return acct.tokens.get(asset, 0)

    def finality_reached(self, block_number: int) -> bool:
        if not 0 <= block_number <= self.head:
            raise OperationError("unknown_block", f"head is {self.head}")
        return self.head - block_number >= self.config.finality_depth

    def pending_for(self, sender: str) -> int:
        return sum(1 for tx in self.mempool if tx.sender == sender)

    def next_nonce(self, sender: str) -> int:
        acct = self.state.accounts.get(sender)
        committed = acct.nonce if acct else 0
        return committed + self.pending_for(sender) + 1

    def address_record(self, address: str) -> dict:
        rec: dict = {}
        acct = self.state.accounts.get(address)
        if acct is not None:
            rec["account"] = acct.record()
        deployed = self.state.contracts.get(address)
        if deployed is not None:
            rec["contract"] = {
                "dialect": deployed.code.dialect,
                "bytecode": deployed.code.bytecode.hex(),
                "source": deployed.code.source,
                "entrypoints": dict(deployed.code.entrypoints),
                "entry_arity": dict(deployed.code.entry_arity),
                "owner": deployed.owner,
            }
        cstate = self.state.contract_states.get(address)
        if cstate is not None:
            rec["contract_state"] = {
                "status": cstate.status,
                "storage": {format(k, "064x"): v for k, v in sorted(cstate.storage.items()) if v},
                "known_keys": [str(k) for k in sorted(cstate.known_keys)],
            }
        return rec

    def reserved_addresses(self) -> set[str]:
        scheme = self.config.id_scheme
        return {burn_sink(scheme), fee_sink(scheme)}

    def app_addresses(self, scope) -> list[str]:
        """Resolve a scope ("all" or iterable of addresses) to a sorted list,
        never including the reserved sinks."""
        reserved = self.reserved_addresses()
        if scope == "all":
            addresses = (set(self.state.accounts) | set(self.state.contracts)) - reserved
        else:
            addresses = set(scope) - reserved
        return sorted(addresses, key=bytes.fromhex)

    # -- transaction construction --------------------------------------

    def make_tx(
        self,
        sender_pubkey: str,
        receiver: str,
        kind: str,
        payload_obj,
        fee: int | None = None,
        nonce: int | None = None,
    ) -> Transaction:
        if kind not in TX_KINDS:
            raise OperationError("bad_kind", f"unknown tx kind {kind!r}")
        sender = self.address_for(sender_pubkey)
        tx = Transaction(
            chain_id=self.chain_id,
            sender=sender,
            receiver=receiver,
            nonce=self.next_nonce(sender) if nonce is None else nonce,
            kind=kind,
            payload=canonical_json(payload_obj),
            fee_offered=self.config.tx_fee if fee is None else fee,
        )
        signature = self.registry.sign(self.config.signature_scheme, sender_pubkey, tx.tx_id)
        return replace(tx, signature=signature)

    # -- mempool --------------------------------------------------------

    def _pending_native_spend(self, sender: str) -> int:
        total = 0
        for tx in self.mempool:
            if tx.sender != sender:
                continue
            total += tx.fee_offered
            obj = tx.payload_obj()
            if tx.kind == "transfer_native":
                total += int(obj.get("amount", 0))
            elif tx.kind == "call_contract":
                total += int(obj.get("value", 0))
            elif tx.kind == "burn" and obj.get("asset") == "native":
                amount = obj.get("amount")
                acct = self.state.accounts.get(sender)
                total += (acct.native if acct else 0) if amount == "all" else int(amount)
        return total

    def _pending_token_spend(self, sender: str, token: str) -> int:
        total = 0
        for tx in self.mempool:
            if tx.sender != sender:
                continue
            obj = tx.payload_obj()
            if tx.kind == "transfer_token" and obj.get("token") == token and not obj.get("mint"):
                total += int(obj.get("amount", 0))
            elif tx.kind == "burn" and obj.get("asset") == token:
                amount = obj.get("amount")
                acct = self.state.accounts.get(sender)
                held = acct.tokens.get(token, 0) if acct else 0
                total += held if amount == "all" else int(amount)
        return total

    def _check_frozen(self, tx: Transaction, block_number: int) -> bool:
        return any(f.covers(tx, block_number) for f in self.freezes)

    def submit_tx(
        self, tx: Transaction, operator_pass: bool = False, internal_sender: bool = False
    ) -> SubmitResult:
        """Validate and pool a transaction.

        Checked in order: signature (including chain id binding), nonce,
        fee floor, spendable funds net of pooled obligations, freeze
        predicates.  `operator_pass` marks migration-tool traffic exempt
        from freezes; it is recorded so freeze audits can tell the two
        apart.
        """
        with self._lock:
            reason = self._admission_reason(tx, internal_sender)
            if reason is None and not operator_pass and self._check_frozen(tx, self.head + 1):
                reason = "frozen"
            if reason is not None:
                return SubmitResult(accepted=False, reason=reason, tx_id=tx.tx_id)
            self.mempool.append(tx)
            if operator_pass:
                self.operator_tx_ids.add(tx.tx_id)
            return SubmitResult(accepted=True, tx_id=tx.tx_id)

    def _admission_reason(self, tx: Transaction, internal_sender: bool) -> str | None:
        if tx.chain_id != self.chain_id or tx.kind not in TX_KINDS:
            return "bad_signature"
        acct = self.state.accounts.get(tx.sender)
        if acct is None:
            return "bad_signature"
        if tx.sender in self.state.contracts:
            if not internal_sender or tx.signature != contract_signature(tx.tx_id):
                return "bad_signature"
        else:
            if acct.public_key is None:
                return "bad_signature"
            if not self.registry.verify(
                self.config.signature_scheme, acct.public_key, tx.tx_id, tx.signature
            ):
                return "bad_signature"
        if tx.nonce != acct.nonce + self.pending_for(tx.sender) + 1:
            return "bad_nonce"
        if tx.fee_offered < self.config.tx_fee:
            return "insufficient_fee"
        need_native = tx.fee_offered
        obj = tx.payload_obj()
        if tx.kind == "transfer_native":
            need_native += int(obj.get("amount", 0))
        elif tx.kind == "call_contract":
            need_native += int(obj.get("value", 0))
        elif tx.kind == "burn":
            amount = obj.get("amount")
            if obj.get("asset", "native") == "native" and amount != "all":
                need_native += int(amount)
        if acct.native - self._pending_native_spend(tx.sender) < need_native:
            return "insufficient_funds"
        if tx.kind == "transfer_token" and not obj.get("mint"):
            token = obj.get("token", "")
            held = acct.tokens.get(token, 0) - self._pending_token_spend(tx.sender, token)
            if held < int(obj.get("amount", 0)):
                return "insufficient_funds"
        if tx.kind == "burn" and obj.get("asset", "native") != "native" and obj.get("amount") != "all":
            token = obj["asset"]
            held = acct.tokens.get(token, 0) - self._pending_token_spend(tx.sender, token)
            if held < int(obj.get("amount", 0)):
                return "insufficient_funds"
        return None

    def submit_or_raise(self, tx: Transaction, operator_pass: bool = False) -> str:
        result = self.submit_tx(tx, operator_pass=operator_pass)
        if not result:
            raise OperationError(result.reason or "rejected", f"tx {tx.tx_id[:12]} rejected")
        return tx.tx_id

    # -- block production ----------------------------------------------

    def produce_block(self) -> Block:
        with self._lock:
            number = self.head + 1
            survivors = []
            for tx in self.mempool:
                if self._check_frozen(tx, number) and tx.tx_id not in self.operator_tx_ids:
                    self.drop_log.append((tx.tx_id, "frozen"))
                else:
                    survivors.append(tx)
            self.mempool = survivors

            # stable sort: equal fees keep submission order, so causally
            # ordered same-fee traffic (deploy before call) stays ordered
            remaining = list(self.mempool)
            remaining.sort(key=lambda t: -t.fee_offered)
            selected: list[Transaction] = []
            picked_per_sender: dict[str, int] = {}
            progressed = True
            while progressed and len(selected) < self.config.block_capacity:
                progressed = False
                for tx in list(remaining):
                    if len(selected) == self.config.block_capacity:
                        break
                    acct = self.state.accounts.get(tx.sender)
                    base = acct.nonce if acct else 0
                    if tx.nonce == base + picked_per_sender.get(tx.sender, 0) + 1:
                        selected.append(tx)
                        picked_per_sender[tx.sender] = picked_per_sender.get(tx.sender, 0) + 1
                        remaining.remove(tx)
                        progressed = True

            committed: list[Transaction] = []
            touched_records: list[tuple[str, tuple[str, ...]]] = []
            for tx in selected:
                try:
                    touched = self._apply_tx(tx)
                except _ApplyError as err:
                    self.drop_log.append((tx.tx_id, err.reason))
                    continue
                committed.append(tx)
                touched_records.append((tx.tx_id, tuple(sorted(set(touched)))))

            block = Block(
                number=number,
                parent_digest=self.blocks[-1].digest,
                timestamp=number,
                tx_list=tuple(committed),
                state_root=self.state.digest(),
                touched=tuple(touched_records),
            )
            self.blocks.append(block)
            self.mempool = remaining
            emit_queue, self._emit_queue = self._emit_queue, []
            for emitted in emit_queue:
                result = self.submit_tx(emitted, internal_sender=True)
                if not result:
                    self.drop_log.append((emitted.tx_id, f"emit_rejected:{result.reason}"))
            self._check_conservation()
            return block

    def produce_blocks(self, count: int) -> None:
        for _ in range(count):
            self.produce_block()

    def advance_until_final(self, block_number: int, block_budget: int = 10_000) -> None:
        produced = 0
        while block_number > self.head or not self.finality_reached(block_number):
            if produced >= block_budget:
                raise OperationError("finality_timeout", "simulation ran out of blocks")
            self.produce_block()
            produced += 1

    # -- transaction application ----------------------------------------

    def _apply_tx(self, tx: Transaction) -> list[str]:
        state = self.state
        acct = state.accounts.get(tx.sender)
        if acct is None:
            raise _ApplyError("unknown_sender")
        if tx.nonce != acct.nonce + 1:
            raise _ApplyError("bad_nonce")
        if acct.native < tx.fee_offered:
            raise _ApplyError("insufficient_funds")
        obj = tx.payload_obj()
        sink = fee_sink(self.config.id_scheme)
        touched = [tx.sender]
        if tx.fee_offered:
            touched.append(sink)

        kind = tx.kind
        if kind == "transfer_native":
            amount = int(obj["amount"])
            if acct.native < amount + tx.fee_offered:
                raise _ApplyError("insufficient_funds")
            dest = state.get_or_create(tx.receiver)
            acct.native -= amount
            dest.native += amount
            touched.append(tx.receiver)
        elif kind == "transfer_token":
            token = obj["token"]
            amount = int(obj["amount"])
            if obj.get("mint"):
                issuer = state.token_issuers.get(token)
                if issuer is None:
                    state.token_issuers[token] = tx.sender
                elif issuer != tx.sender:
                    raise _ApplyError("not_issuer")
                dest = state.get_or_create(tx.receiver)
                dest.tokens[token] = dest.tokens.get(token, 0) + amount
            else:
                if acct.tokens.get(token, 0) < amount:
                    raise _ApplyError("insufficient_funds")
                dest = state.get_or_create(tx.receiver)
                acct.tokens[token] = acct.tokens.get(token, 0) - amount
                dest.tokens[token] = dest.tokens.get(token, 0) + amount
            touched.append(tx.receiver)
        elif kind == "create_account":
            public_key = obj["public_key"]
            address = derive_address(public_key, self.config.id_scheme)
            state.get_or_create(address, public_key)
            touched.append(address)
        elif kind == "deploy_contract":
            touched.extend(self._apply_deploy(tx, obj))
        elif kind == "call_contract":
            touched.extend(self._apply_call(tx, obj))
        elif kind == "poe_anchor":
            pass  # the payload itself is the anchor
        elif kind == "burn":
            sink_addr = burn_sink(self.config.id_scheme)
            if tx.receiver != sink_addr:
                raise _ApplyError("bad_burn_target")
            asset = obj.get("asset", "native")
            amount = obj.get("amount")
            dest = state.get_or_create(sink_addr)
            if asset == "native":
                value = acct.native - tx.fee_offered if amount == "all" else int(amount)
                if value < 0 or acct.native < value + tx.fee_offered:
                    raise _ApplyError("insufficient_funds")
                acct.native -= value
                dest.native += value
            else:
                held = acct.tokens.get(asset, 0)
                value = held if amount == "all" else int(amount)
                if held < value:
                    raise _ApplyError("insufficient_funds")
                acct.tokens[asset] = held - value
                dest.tokens[asset] = dest.tokens.get(asset, 0) + value
            touched.append(sink_addr)
        else:
            raise _ApplyError("bad_kind")

        acct.nonce += 1
        acct.native -= tx.fee_offered
        state.get_or_create(sink).native += tx.fee_offered
        return touched

    def _apply_deploy(self, tx: Transaction, obj: dict) -> list[str]:
        code = vm.ContractCode(
            dialect=obj["dialect"],
            bytecode=bytes.fromhex(obj["bytecode"]),
            source=obj.get("source"),
            entrypoints={k: int(v) for k, v in obj.get("entrypoints", {}).items()},
            entry_arity={k: int(v) for k, v in obj.get("entry_arity", {}).items()},
        )
        try:
            vm.validate_code(code)
        except OperationError as err:
            raise _ApplyError(err.code) from None
        if code.dialect not in vm.executable_dialects(self.config.vm_dialect):
            raise _ApplyError("dialect_mismatch")
        address = contract_address(tx.sender, tx.nonce, self.config.id_scheme)
        cstate = vm.ContractState(contract_address=address)
        ctor_args = tuple(int(a) for a in obj.get("ctor_args", []))
        if "init" in code.entrypoints and not obj.get("skip_init"):
            caller = int(tx.sender, 16)
            result = vm.run_call(
                code,
                "init",
                ctor_args,
                vm.CallContext(caller=caller, callvalue=0),
                read_slot=lambda key: 0,
            )
            self.traces[tx.tx_id] = result.trace
            if not result.trace.ok:
                raise _ApplyError("ctor_revert")
            for key, _old, new in result.trace.storage_writes:
                cstate.storage[vm.slot_hash(code.dialect, key)] = new
                cstate.known_keys.add(key)
            if result.terminated:
                cstate.status = vm.STATUS_TERMINATED
        for key_str, value in obj.get("storage_logical", {}).items():
            key = int(key_str)
            cstate.storage[vm.slot_hash(code.dialect, key)] = int(value)
            cstate.known_keys.add(key)
        self.state.get_or_create(address)
        self.state.contracts[address] = vm.DeployedContract(code=code, owner=tx.sender)
        self.state.contract_states[address] = cstate
        return [address]

    def _apply_call(self, tx: Transaction, obj: dict) -> list[str]:
        address = tx.receiver
        deployed = self.state.contracts.get(address)
        if deployed is None:
            raise _ApplyError("not_deployed")
        cstate = self.state.contract_states[address]
        if cstate.status != vm.STATUS_ACTIVE:
            raise _ApplyError("terminated")
        code = deployed.code
        if code.dialect not in vm.executable_dialects(self.config.vm_dialect):
            raise _ApplyError("dialect_mismatch")
        method = obj["method"]
        value = int(obj.get("value", 0))
        acct = self.state.accounts[tx.sender]
        if acct.native < value + tx.fee_offered:
            raise _ApplyError("insufficient_funds")

        if method == "__selfdestruct":
            if tx.sender == deployed.owner:
                cstate.status = vm.STATUS_SELF_DESTRUCTED
                self.traces[tx.tx_id] = vm.VmTrace((), (), (), (), "ok", None)
            else:
                self.traces[tx.tx_id] = vm.VmTrace((), (), (), (), "revert:unauthorized", None)
            return [address]
        if method not in code.entrypoints:
            raise _ApplyError("unknown_method")

        args = tuple(int(a) for a in obj.get("args", []))
        if len(args) != code.entry_arity.get(method, 0):
            raise _ApplyError("bad_arity")
        result = vm.run_call(
            code,
            method,
            args,
            vm.CallContext(caller=int(tx.sender, 16), callvalue=value),
            read_slot=lambda key: cstate.storage.get(vm.slot_hash(code.dialect, key), 0),
        )
        self.traces[tx.tx_id] = result.trace
        if result.trace.outcome == "out_of_gas":
            raise _ApplyError("out_of_gas")
        if not result.trace.ok:
            return [address]  # committed, fee paid, no state effects
        for key, _old, new in result.trace.storage_writes:
            cstate.storage[vm.slot_hash(code.dialect, key)] = new
            cstate.known_keys.add(key)
        if value:
            acct.native -= value
            self.state.get_or_create(address).native += value
        if result.terminated:
            cstate.status = vm.STATUS_TERMINATED
        if result.destroyed:
            cstate.status = vm.STATUS_SELF_DESTRUCTED
        contract_acct = self.state.get_or_create(address)
        emit_base = contract_acct.nonce + sum(
            1 for queued in self._emit_queue if queued.sender == address
        ) + self.pending_for(address)
        for index, (receiver_int, amount) in enumerate(result.trace.emitted):
            emitted = Transaction(
                chain_id=self.chain_id,
                sender=address,
                receiver=int_to_address(receiver_int, self.config.id_scheme),
                nonce=emit_base + index + 1,
                kind="transfer_native",
                payload=canonical_json({"amount": amount}),
                fee_offered=self.config.tx_fee,
            )
            emitted = replace(emitted, signature=contract_signature(emitted.tx_id))
            self._emit_queue.append(emitted)
        return [address]

    # -- freezes ---------------------------------------------------------

    def freeze(self, at_block: int, scope="all") -> Freeze:
        """From block `at_block` onward, reject transactions in scope."""
        with self._lock:
            if at_block <= self.head:
                raise OperationError("block_in_past", f"head is already {self.head}")
            if scope != "all":
                scope = frozenset(scope)
            entry = Freeze(at_block=at_block, scope=scope)
            self.freezes.append(entry)
            return entry

    # -- deltas and exports ----------------------------------------------

    def read_delta(self, since_block: int) -> dict[str, DeltaEntry]:
        """Addresses touched by blocks (since_block, head], with the
        transactions that touched them, and their state as of head."""
        if not 0 <= since_block <= self.head:
            raise OperationError("unknown_block", f"head is {self.head}")
        entries: dict[str, DeltaEntry] = {}
        for block in self.blocks[since_block + 1 :]:
            for tx_id, addresses in block.touched:
                for address in addresses:
                    entry = entries.get(address)
                    if entry is None:
                        entry = DeltaEntry(address=address, record={}, tx_ids=[])
                        entries[address] = entry
                    entry.tx_ids.append(tx_id)
        for address, entry in entries.items():
            entry.record = self.address_record(address)
        return entries

    def deploy_contract(
        self, code: vm.ContractCode, deployer_pubkey: str, ctor_args=(), operator_pass: bool = False
    ) -> str:
        payload = {
            "dialect": code.dialect,
            "bytecode": code.bytecode.hex(),
            "source": code.source,
            "entrypoints": code.entrypoints,
            "entry_arity": code.entry_arity,
            "ctor_args": list(ctor_args),
        }
        sender = self.address_for(deployer_pubkey)
        tx = self.make_tx(deployer_pubkey, sender, "deploy_contract", payload)
        address = contract_address(sender, tx.nonce, self.config.id_scheme)
        self.submit_or_raise(tx, operator_pass=operator_pass)
        self.produce_block()
        if address not in self.state.contracts:
            reason = dict(self.drop_log).get(tx.tx_id, "deploy_failed")
            raise OperationError(reason, "deploy transaction was dropped")
        return address

    def call_contract(
        self, address, method, args, caller_pubkey, value: int = 0, operator_pass: bool = False
    ) -> vm.VmTrace:
        payload = {"method": method, "args": [int(a) for a in args], "value": value}
        tx = self.make_tx(caller_pubkey, address, "call_contract", payload)
        self.submit_or_raise(tx, operator_pass=operator_pass)
        self.produce_block()
        trace = self.traces.get(tx.tx_id)
        if trace is None:
            reason = dict(self.drop_log).get(tx.tx_id, "call_failed")
            raise OperationError(reason, "call transaction was dropped")
        return trace

    def self_destruct_contract(
        self, address: str, caller_pubkey: str, operator_pass: bool = False
    ) -> str:
        payload = {"method": "__selfdestruct", "args": [], "value": 0}
        tx = self.make_tx(caller_pubkey, address, "call_contract", payload)
        self.submit_or_raise(tx, operator_pass=operator_pass)
        self.produce_block()
        trace = self.traces.get(tx.tx_id)
        if trace is None or not trace.ok:
            raise OperationError("unauthorized", "destruct transaction did not take effect")
        return tx.tx_id

    def export_state_doc(self, include_blocks: bool = True) -> dict:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "chain_id": self.chain_id,
            "config": self.config.to_record(),
            "head": self.head,
            "state_root": self.blocks[-1].state_root,
            "accounts": {
                address: acct.record()
                for address, acct in sorted(self.state.accounts.items())
            },
            "contracts": {
                address: self.address_record(address)["contract"]
                for address in sorted(self.state.contracts)
            },
            "contract_states": {
                address: self.address_record(address)["contract_state"]
                for address in sorted(self.state.contract_states)
            },
            "token_issuers": dict(sorted(self.state.token_issuers.items())),
            "genesis": self.genesis_doc,
        }
        if include_blocks:
            doc["blocks"] = [block.record() for block in self.blocks]
        return doc

    # -- invariants -------------------------------------------------------

    def _check_conservation(self) -> None:
        total = sum(acct.native for acct in self.state.accounts.values())
        expected = self.expected_native_supply()
        if total != expected:
            raise OperationError(
                "conservation_violated",
                f"native total {total} != allocated {expected} at block {self.head}",
            )

    def inject_states(self, records: list[dict], annotation: str) -> Block:
        """Append a block whose state changes bypass transaction rules.
        Only hard forks use this; the injected records ride in the block."""
        with self._lock:
            injected_native = 0
            touched = []
            for record in records:
                address = record["address"]
                acct = self.state.get_or_create(address, record.get("public_key") or None)
                acct.native += int(record.get("native", 0))
                injected_native += int(record.get("native", 0))
                for token, value in record.get("tokens", {}).items():
                    acct.tokens[token] = acct.tokens.get(token, 0) + int(value)
                if "contract" in record:
                    spec = record["contract"]
                    code = vm.ContractCode(
                        dialect=spec["dialect"],
                        bytecode=bytes.fromhex(spec["bytecode"]),
                        source=spec.get("source"),
                        entrypoints={k: int(v) for k, v in spec["entrypoints"].items()},
                        entry_arity={k: int(v) for k, v in spec["entry_arity"].items()},
                    )
                    self.state.contracts[address] = vm.DeployedContract(
                        code=code, owner=spec.get("owner", address)
                    )
                    cstate = vm.ContractState(contract_address=address)
                    for slot_hex, value in spec.get("storage", {}).items():
                        cstate.storage[int(slot_hex, 16)] = int(value)
                    cstate.known_keys = {int(k) for k in spec.get("known_keys", [])}
                    cstate.status = spec.get("status", vm.STATUS_ACTIVE)
                    self.state.contract_states[address] = cstate
                touched.append(address)
            self._injected_native += injected_native
            number = self.head + 1
            block = Block(
                number=number,
                parent_digest=self.blocks[-1].digest,
                timestamp=number,
                tx_list=(),
                state_root=self.state.digest(),
                annotation=annotation,
                injected=tuple(records),
                touched=(("__injected__", tuple(sorted(set(touched)))),) if touched else (),
            )
            self.blocks.append(block)
            self._check_conservation()
            return block

    def append_marker_block(self, annotation: str) -> Block:
        return self.inject_states([], annotation)


def block_from_record(record: dict) -> Block:
    return Block(
        number=record["number"],
        parent_digest=record["parent_digest"],
        timestamp=record["timestamp"],
        tx_list=tuple(Transaction.from_record(r) for r in record["txs"]),
        state_root=record["state_root"],
        annotation=record.get("annotation", ""),
        injected=tuple(record.get("injected", [])),
        touched=tuple(
            (tx_id, tuple(addrs)) for tx_id, addrs in record.get("touched", [])
        ),
    )


def state_from_doc(doc: dict) -> GlobalState:
    """Rebuild a GlobalState from an `export_state_doc` dump."""
    state = GlobalState()
    for address, rec in doc.get("accounts", {}).items():
        state.accounts[address] = Account(
            address=address,
            public_key=rec.get("public_key") or None,
            nonce=int(rec.get("nonce", 0)),
            native=int(rec.get("native", 0)),
            tokens={t: int(v) for t, v in rec.get("tokens", {}).items()},
        )
    for address, rec in doc.get("contracts", {}).items():
        code = vm.ContractCode(
            dialect=rec["dialect"],
            bytecode=bytes.fromhex(rec["bytecode"]),
            source=rec.get("source"),
            entrypoints={k: int(v) for k, v in rec.get("entrypoints", {}).items()},
            entry_arity={k: int(v) for k, v in rec.get("entry_arity", {}).items()},
        )
        state.contracts[address] = vm.DeployedContract(code=code, owner=rec["owner"])
    for address, rec in doc.get("contract_states", {}).items():
        cstate = vm.ContractState(contract_address=address)
        cstate.status = rec.get("status", vm.STATUS_ACTIVE)
        for slot_hex, value in rec.get("storage", {}).items():
            cstate.storage[int(slot_hex, 16)] = int(value)
        cstate.known_keys = {int(k) for k in rec.get("known_keys", [])}
        state.contract_states[address] = cstate
    for token, issuer in doc.get("token_issuers", {}).items():
        state.token_issuers[token] = issuer
    return state


def replay_blocks(genesis_doc: dict, registry: KeyRegistry, blocks: list[Block]) -> ChainInstance:
    """Re-execute a block sequence from genesis; raises verification_failed
    on any digest, link, or application mismatch."""
    if not blocks:
        raise OperationError("verification_failed", "no blocks to replay")
    replica = ChainInstance.from_genesis_doc(genesis_doc, registry)
    if replica.blocks[0].digest != blocks[0].digest:
        raise OperationError("verification_failed", "genesis mismatch")
    for block in blocks[1:]:
        if block.parent_digest != replica.blocks[-1].digest:
            raise OperationError("verification_failed", f"broken link at block {block.number}")
        if block.number != replica.head + 1 or block.timestamp != block.number:
            raise OperationError("verification_failed", f"bad numbering at block {block.number}")
        if block.injected or block.annotation:
            rebuilt = replica.inject_states(list(block.injected), block.annotation)
        else:
            # the block's tx list is authoritative: carry no pool across
            replica.mempool = []
            for tx in block.tx_list:
                result = replica.submit_tx(
                    tx, operator_pass=True, internal_sender=tx.sender in replica.state.contracts
                )
                if not result:
                    raise OperationError(
                        "verification_failed",
                        f"tx {tx.tx_id[:12]} rejected on replay: {result.reason}",
                    )
            rebuilt = replica.produce_block()
            if [t.tx_id for t in rebuilt.tx_list] != [t.tx_id for t in block.tx_list]:
                raise OperationError(
                    "verification_failed", f"block {block.number} replays differently"
                )
        if rebuilt.state_root != block.state_root:
            raise OperationError("verification_failed", f"state root diverges at {block.number}")
        if rebuilt.digest != block.digest:
            raise OperationError("verification_failed", f"digest diverges at {block.number}")
    return replica
