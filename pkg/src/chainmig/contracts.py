"""Stack-machine contracts in two bytecode dialects.

The two dialects share one mnemonic set and one semantics; they differ in
opcode byte values, in the width of the ``push`` immediate (8 bytes in
dialectA, 4 in dialectB), and in how logical storage keys are hashed to
raw storage slots.  Jump targets are byte offsets, so the same assembly
text encodes to different offsets per dialect; moving code between
dialects therefore requires reassembly, not byte mapping.

Code and state are kept strictly apart: `ContractCode` never changes
after deploy, and all mutation lands in `ContractState` (held in the
ledger's global state, keyed by contract address).

Execution is deterministic: a fixed step budget, no ambient inputs, and a
`VmTrace` that records every step, storage write (logical keys), emitted
transaction, and the outcome.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import OperationError

STEP_BUDGET = 10_000
STACK_LIMIT = 1024
WORD_MOD = 1 << 256
TERMINATE_FLAG_KEY = 2

STATUS_ACTIVE = "active"
STATUS_TERMINATED = "terminated"
STATUS_SELF_DESTRUCTED = "self_destructed"

# mnemonic -> operand kind (None, "imm" = push immediate, "idx" = one-byte index)
OPS = {
    "push": "imm",
    "pop": None,
    "dup": "idx",
    "swap": "idx",
    "add": None,
    "sub": None,
    "mul": None,
    "lt": None,
    "eq": None,
    "jump": None,
    "jumpi": None,
    "sload": None,
    "sstore": None,
    "caller": None,
    "callvalue": None,
    "emit_tx": None,
    "burnflag": None,
    "selfdestruct": None,
    "revert": None,
    "return": None,
    "log": None,
}

_BASE_OPCODES = {
    "push": 0x01, "pop": 0x02, "dup": 0x03, "swap": 0x04,
    "add": 0x10, "sub": 0x11, "mul": 0x12, "lt": 0x13, "eq": 0x14,
    "jump": 0x20, "jumpi": 0x21, "sload": 0x30, "sstore": 0x31,
    "caller": 0x40, "callvalue": 0x41, "emit_tx": 0x50, "burnflag": 0x51,
    "selfdestruct": 0x52, "revert": 0x60, "return": 0x61, "log": 0x62,
}

DIALECTS = ("dialectA", "dialectB")

DIALECT_OPCODES = {
    "dialectA": dict(_BASE_OPCODES),
    "dialectB": {m: b ^ 0xA5 for m, b in _BASE_OPCODES.items()},
}
DIALECT_MNEMONICS = {
    d: {b: m for m, b in table.items()} for d, table in DIALECT_OPCODES.items()
}
PUSH_WIDTH = {"dialectA": 8, "dialectB": 4}
_SLOT_TAG = {"dialectA": b"slotA:", "dialectB": b"slotB:"}


def executable_dialects(chain_dialect: str) -> frozenset[str]:
    """Dialects a chain's engine can run; `emulating` interprets both."""
    if chain_dialect == "emulating":
        return frozenset(DIALECTS)
    return frozenset({chain_dialect})


def slot_hash(dialect: str, key: int) -> int:
    """Map a logical storage key to the dialect's raw storage slot."""
    raw = hashlib.sha256(_SLOT_TAG[dialect] + key.to_bytes(32, "big")).digest()
    return int.from_bytes(raw, "big")


@dataclass(frozen=True)
class Instr:
    offset: int
    mnemonic: str
    operand: int | None = None


@dataclass(frozen=True)
class ContractCode:
    """Immutable deployable unit: bytecode plus its assembly provenance."""

    dialect: str
    bytecode: bytes
    source: str | None
    entrypoints: dict[str, int]
    entry_arity: dict[str, int]

    def code_digest(self) -> str:
        return hashlib.sha256(
            self.dialect.encode() + b":" + self.bytecode
        ).hexdigest()


@dataclass
class DeployedContract:
    code: ContractCode
    owner: str


@dataclass
class ContractState:
    """Mutable side of a contract, stored in the ledger's global state.

    `storage` is keyed by raw (dialect-hashed) slots; `known_keys` keeps
    the logical keys ever written so state can be re-keyed when code is
    moved to a dialect with a different slot hash.
    """

    contract_address: str
    storage: dict[int, int] = field(default_factory=dict)
    known_keys: set[int] = field(default_factory=set)
    status: str = STATUS_ACTIVE

    def logical_items(self, dialect: str) -> dict[int, int]:
        out = {}
        for key in sorted(self.known_keys):
            value = self.storage.get(slot_hash(dialect, key), 0)
            if value:
                out[key] = value
        return out


@dataclass(frozen=True)
class VmTrace:
    """Deterministic record of one contract call."""

    steps: tuple[tuple[str, int], ...]
    storage_writes: tuple[tuple[int, int, int], ...]
    emitted: tuple[tuple[int, int], ...]
    logs: tuple[int, ...]
    outcome: str  # "ok" | "revert" | "revert:<reason>" | "out_of_gas"
    returned: int | None

    @property
    def ok(self) -> bool:
        return self.outcome == "ok"

    def record(self) -> dict:
        return {
            "steps": [[m, d] for m, d in self.steps],
            "storage_writes": [
                [format(k, "064x"), old, new] for k, old, new in self.storage_writes
            ],
            "emitted": [[format(r, "x"), a] for r, a in self.emitted],
            "logs": list(self.logs),
            "outcome": self.outcome,
            "returned": self.returned,
        }


@dataclass(frozen=True)
class CallResult:
    trace: VmTrace
    terminated: bool
    destroyed: bool


# ---------------------------------------------------------------------------
# assembler / disassembler


def _parse_operand(token: str, labels_ok: bool, line_no: int):
    if token.startswith("@"):
        if not labels_ok:
            raise OperationError("parse_error", f"line {line_no}: label operand not allowed here")
        return token[1:]
    try:
        return int(token, 0)
    except ValueError:
        raise OperationError("parse_error", f"line {line_no}: bad operand {token!r}") from None


def assemble(source: str, dialect: str) -> ContractCode:
    """Assemble one-instruction-per-line text into bytecode for `dialect`."""
    if dialect not in DIALECT_OPCODES:
        raise OperationError("parse_error", f"unknown dialect {dialect!r}")
    push_width = PUSH_WIDTH[dialect]
    items: list[tuple] = []  # ("instr", line_no, mnemonic, operand) / ("label", name) / ("method", name, arity)
    for line_no, raw in enumerate(source.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith(".method"):
            parts = line.split()
            if len(parts) != 3:
                raise OperationError("parse_error", f"line {line_no}: .method NAME ARITY")
            try:
                arity = int(parts[2])
            except ValueError:
                raise OperationError("parse_error", f"line {line_no}: bad arity") from None
            items.append(("method", parts[1], arity))
            continue
        if line.endswith(":"):
            name = line[:-1].strip()
            if not name or " " in name:
                raise OperationError("parse_error", f"line {line_no}: bad label")
            items.append(("label", name, line_no))
            continue
        parts = line.split()
        mnemonic = parts[0]
        if mnemonic not in OPS:
            raise OperationError("parse_error", f"line {line_no}: unknown instruction {mnemonic!r}")
        kind = OPS[mnemonic]
        if kind is None:
            if len(parts) != 1:
                raise OperationError("parse_error", f"line {line_no}: {mnemonic} takes no operand")
            operand = None
        else:
            if len(parts) != 2:
                raise OperationError("parse_error", f"line {line_no}: {mnemonic} needs an operand")
            operand = _parse_operand(parts[1], labels_ok=(kind == "imm"), line_no=line_no)
        items.append(("instr", line_no, mnemonic, operand))

    # first pass: lay out offsets, bind labels and methods
    offset = 0
    labels: dict[str, int] = {}
    entrypoints: dict[str, int] = {}
    entry_arity: dict[str, int] = {}
    laid: list[tuple[int, int, str, object]] = []
    pending_labels: list[tuple[str, int]] = []
    pending_methods: list[tuple[str, int]] = []
    for item in items:
        if item[0] == "label":
            pending_labels.append((item[1], item[2]))
        elif item[0] == "method":
            pending_methods.append((item[1], item[2]))
        else:
            _, line_no, mnemonic, operand = item
            for name, lno in pending_labels:
                if name in labels:
                    raise OperationError("parse_error", f"line {lno}: duplicate label {name!r}")
                labels[name] = offset
            pending_labels.clear()
            for name, arity in pending_methods:
                entrypoints[name] = offset
                entry_arity[name] = arity
            pending_methods.clear()
            laid.append((offset, line_no, mnemonic, operand))
            size = 1
            if OPS[mnemonic] == "imm":
                size += push_width
            elif OPS[mnemonic] == "idx":
                size += 1
            offset += size
    if pending_labels or pending_methods:
        raise OperationError("parse_error", "trailing label or .method with no instruction")

    out = bytearray()
    opcodes = DIALECT_OPCODES[dialect]
    for offset, line_no, mnemonic, operand in laid:
        out.append(opcodes[mnemonic])
        kind = OPS[mnemonic]
        if kind == "imm":
            if isinstance(operand, str):
                if operand not in labels:
                    raise OperationError("parse_error", f"line {line_no}: unknown label {operand!r}")
                value = labels[operand]
            else:
                value = operand
            if value < 0 or value >= 1 << (8 * push_width):
                raise OperationError(
                    "immediate_out_of_range",
                    f"line {line_no}: {value} does not fit the {push_width}-byte"
                    f" push immediate of {dialect}",
                )
            out += value.to_bytes(push_width, "big")
        elif kind == "idx":
            if not isinstance(operand, int) or operand < 1 or operand > 255:
                raise OperationError("parse_error", f"line {line_no}: index operand must be 1..255")
            out.append(operand)
    code = ContractCode(
        dialect=dialect,
        bytecode=bytes(out),
        source=source,
        entrypoints=entrypoints,
        entry_arity=entry_arity,
    )
    validate_code(code)
    return code


def decode(code: ContractCode) -> list[Instr]:
    mnemonics = DIALECT_MNEMONICS[code.dialect]
    push_width = PUSH_WIDTH[code.dialect]
    instrs = []
    data = code.bytecode
    i = 0
    while i < len(data):
        mnemonic = mnemonics.get(data[i])
        if mnemonic is None:
            raise OperationError(
                "invalid_bytecode", f"unknown opcode 0x{data[i]:02x} at offset {i}"
            )
        kind = OPS[mnemonic]
        operand = None
        size = 1
        if kind == "imm":
            if i + 1 + push_width > len(data):
                raise OperationError("invalid_bytecode", f"truncated push at offset {i}")
            operand = int.from_bytes(data[i + 1 : i + 1 + push_width], "big")
            size += push_width
        elif kind == "idx":
            if i + 2 > len(data):
                raise OperationError("invalid_bytecode", f"truncated operand at offset {i}")
            operand = data[i + 1]
            size += 1
        instrs.append(Instr(offset=i, mnemonic=mnemonic, operand=operand))
        i += size
    return instrs


def disassemble(code: ContractCode) -> str:
    """Emit canonical assembly text (synthetic L<offset> labels)."""
    instrs = decode(code)
    offsets = {ins.offset for ins in instrs}
    targets = set()
    for idx, ins in enumerate(instrs):
        if ins.mnemonic in ("jump", "jumpi") and idx > 0 and instrs[idx - 1].mnemonic == "push":
            targets.add(instrs[idx - 1].operand)
    methods_at: dict[int, list[str]] = {}
    for name in sorted(code.entrypoints):
        methods_at.setdefault(code.entrypoints[name], []).append(name)
    lines = []
    for idx, ins in enumerate(instrs):
        for name in methods_at.get(ins.offset, ()):
            lines.append(f".method {name} {code.entry_arity.get(name, 0)}")
        if ins.offset in targets:
            lines.append(f"L{ins.offset}:")
        if ins.mnemonic == "push":
            nxt = instrs[idx + 1].mnemonic if idx + 1 < len(instrs) else None
            if nxt in ("jump", "jumpi") and ins.operand in offsets:
                lines.append(f"  push @L{ins.operand}")
                continue
        if OPS[ins.mnemonic] is None:
            lines.append(f"  {ins.mnemonic}")
        else:
            lines.append(f"  {ins.mnemonic} {ins.operand}")
    return "\n".join(lines) + "\n"


# stack arity per mnemonic: (pops, pushes); dup/swap handled specially
_STACK_EFFECT = {
    "push": (0, 1), "pop": (1, 0), "add": (2, 1), "sub": (2, 1), "mul": (2, 1),
    "lt": (2, 1), "eq": (2, 1), "jump": (1, 0), "jumpi": (2, 0),
    "sload": (1, 1), "sstore": (2, 0), "caller": (0, 1), "callvalue": (0, 1),
    "emit_tx": (2, 0), "burnflag": (0, 0), "selfdestruct": (0, 0),
    "revert": (0, 0), "return": (1, 0), "log": (1, 0),
}


def validate_code(code: ContractCode) -> None:
    """Static checks: decodable, jumps land on instruction starts, and no
    reachable path under- or over-flows the stack from any entrypoint."""
    instrs = decode(code)
    offsets = {ins.offset: idx for idx, ins in enumerate(instrs)}
    for idx, ins in enumerate(instrs):
        if ins.mnemonic in ("jump", "jumpi"):
            if idx == 0 or instrs[idx - 1].mnemonic != "push":
                raise OperationError(
                    "invalid_bytecode",
                    f"{ins.mnemonic} at offset {ins.offset} lacks a constant target",
                )
            if instrs[idx - 1].operand not in offsets:
                raise OperationError(
                    "invalid_bytecode",
                    f"jump target {instrs[idx - 1].operand} is not an instruction start",
                )
    for name, entry in code.entrypoints.items():
        if entry not in offsets:
            raise OperationError("invalid_bytecode", f"entrypoint {name!r} offset {entry} invalid")
        seen: set[tuple[int, int]] = set()
        work = [(offsets[entry], code.entry_arity.get(name, 0))]
        while work:
            idx, depth = work.pop()
            if idx >= len(instrs):
                continue  # fell off the end: implicit halt
            if (idx, depth) in seen:
                continue
            seen.add((idx, depth))
            ins = instrs[idx]
            if ins.mnemonic == "dup":
                need, delta = ins.operand, 1
            elif ins.mnemonic == "swap":
                need, delta = ins.operand + 1, 0
            else:
                pops, pushes = _STACK_EFFECT[ins.mnemonic]
                need, delta = pops, pushes - pops
            if depth < need:
                raise OperationError(
                    "invalid_bytecode",
                    f"stack underflow at offset {ins.offset} in {name!r}",
                )
            ndepth = depth + delta
            if ndepth > STACK_LIMIT:
                raise OperationError("invalid_bytecode", f"stack overflow in {name!r}")
            if ins.mnemonic in ("revert", "return", "selfdestruct"):
                continue
            if ins.mnemonic == "jump":
                work.append((offsets[instrs[idx - 1].operand], ndepth))
                continue
            if ins.mnemonic == "jumpi":
                work.append((offsets[instrs[idx - 1].operand], ndepth))
            work.append((idx + 1, ndepth))


# ---------------------------------------------------------------------------
# interpreter


@dataclass(frozen=True)
class CallContext:
    caller: int
    callvalue: int = 0
    step_budget: int = STEP_BUDGET


def run_call(
    code: ContractCode,
    method: str,
    args: tuple[int, ...],
    ctx: CallContext,
    read_slot,
) -> CallResult:
    """Execute one entrypoint; storage writes use logical keys and are only
    meaningful when the outcome is ``ok`` (atomicity is the caller's job).

    ``read_slot(logical_key) -> int`` supplies committed storage values.
    """
    if method not in code.entrypoints:
        raise OperationError("unknown_method", f"no entrypoint {method!r}")
    if len(args) != code.entry_arity.get(method, 0):
        raise OperationError(
            "bad_arity", f"{method} takes {code.entry_arity.get(method, 0)} args"
        )
    instrs = decode(code)
    offsets = {ins.offset: idx for idx, ins in enumerate(instrs)}
    idx = offsets[code.entrypoints[method]]
    stack: list[int] = [a % WORD_MOD for a in args]
    overlay: dict[int, int] = {}
    writes: list[tuple[int, int, int]] = []
    emitted: list[tuple[int, int]] = []
    logs: list[int] = []
    steps: list[tuple[str, int]] = []
    terminated = destroyed = False
    outcome = "ok"
    returned: int | None = None
    budget = ctx.step_budget

    def load(key: int) -> int:
        if key in overlay:
            return overlay[key]
        return int(read_slot(key))

    def fault(reason: str):
        nonlocal outcome
        outcome = f"revert:{reason}"

    while True:
        if idx >= len(instrs):
            break
        if budget <= 0:
            outcome = "out_of_gas"
            break
        budget -= 1
        ins = instrs[idx]
        steps.append((ins.mnemonic, len(stack)))
        m = ins.mnemonic
        if m == "dup":
            if len(stack) < ins.operand:
                fault("stack_underflow")
                break
            stack.append(stack[-ins.operand])
        elif m == "swap":
            if len(stack) < ins.operand + 1:
                fault("stack_underflow")
                break
            stack[-1], stack[-ins.operand - 1] = stack[-ins.operand - 1], stack[-1]
        else:
            pops, _ = _STACK_EFFECT[m]
            if len(stack) < pops:
                fault("stack_underflow")
                break
            if m == "push":
                stack.append(ins.operand)
            elif m == "pop":
                stack.pop()
            elif m in ("add", "sub", "mul", "lt", "eq"):
                b = stack.pop()
                a = stack.pop()
                if m == "add":
                    stack.append((a + b) % WORD_MOD)
                elif m == "sub":
                    stack.append((a - b) % WORD_MOD)
                elif m == "mul":
                    stack.append((a * b) % WORD_MOD)
                elif m == "lt":
                    stack.append(1 if a < b else 0)
                else:
                    stack.append(1 if a == b else 0)
            elif m == "jump":
                target = stack.pop()
                if target not in offsets:
                    fault("invalid_jump")
                    break
                idx = offsets[target]
                continue
            elif m == "jumpi":
                target = stack.pop()
                cond = stack.pop()
                if cond:
                    if target not in offsets:
                        fault("invalid_jump")
                        break
                    idx = offsets[target]
                    continue
            elif m == "sload":
                key = stack.pop()
                stack.append(load(key))
            elif m == "sstore":
                key = stack.pop()
                value = stack.pop()
                writes.append((key, load(key), value))
                overlay[key] = value
            elif m == "caller":
                stack.append(ctx.caller % WORD_MOD)
            elif m == "callvalue":
                stack.append(ctx.callvalue % WORD_MOD)
            elif m == "emit_tx":
                receiver = stack.pop()
                amount = stack.pop()
                emitted.append((receiver, amount))
            elif m == "log":
                logs.append(stack.pop())
            elif m == "burnflag":
                writes.append((TERMINATE_FLAG_KEY, load(TERMINATE_FLAG_KEY), 1))
                overlay[TERMINATE_FLAG_KEY] = 1
                terminated = True
            elif m == "selfdestruct":
                destroyed = True
                break
            elif m == "revert":
                outcome = "revert"
                break
            elif m == "return":
                returned = stack.pop()
                break
        if len(stack) > STACK_LIMIT:
            fault("stack_overflow")
            break
        idx += 1

    ok = outcome == "ok"
    trace = VmTrace(
        steps=tuple(steps),
        storage_writes=tuple(writes) if ok else (),
        emitted=tuple(emitted) if ok else (),
        logs=tuple(logs) if ok else (),
        outcome=outcome,
        returned=returned if ok else None,
    )
    return CallResult(trace=trace, terminated=terminated and ok, destroyed=destroyed and ok)


def recompile_check(code: ContractCode) -> None:
    """Verify stored source reassembles to exactly the stored bytecode."""
    if code.source is None:
        raise OperationError("recompile_mismatch", "code carries no source")
    rebuilt = assemble(code.source, code.dialect)
    if rebuilt.bytecode != code.bytecode:
        raise OperationError("recompile_mismatch", "source does not reproduce bytecode")


# ---------------------------------------------------------------------------
# chain-level sugar (duck-typed over the ledger's ChainInstance)


def deploy(chain, code: ContractCode, deployer_pubkey: str, ctor_args: tuple[int, ...] = ()) -> str:
    """Deploy `code` via an on-chain transaction and return the new address."""
    validate_code(code)
    if code.dialect not in executable_dialects(chain.config.vm_dialect):
        raise OperationError(
            "dialect_mismatch",
            f"{code.dialect} code cannot run on a {chain.config.vm_dialect} chain",
        )
    return chain.deploy_contract(code, deployer_pubkey, ctor_args)


def execute(
    chain,
    contract_address: str,
    method: str,
    args: tuple[int, ...],
    caller_pubkey: str,
    value: int = 0,
) -> VmTrace:
    """Call a contract method via an on-chain transaction; returns the trace.

    Raises with codes not_deployed / terminated / dialect_mismatch /
    out_of_gas; a plain reverted call still returns its trace.
    """
    deployed = chain.state.contracts.get(contract_address)
    if deployed is None:
        raise OperationError("not_deployed", f"no contract at {contract_address}")
    cstate = chain.state.contract_states[contract_address]
    if cstate.status != STATUS_ACTIVE:
        raise OperationError("terminated", f"contract is {cstate.status}")
    if deployed.code.dialect not in executable_dialects(chain.config.vm_dialect):
        raise OperationError("dialect_mismatch", "chain engine cannot run this dialect")
    if method not in deployed.code.entrypoints:
        raise OperationError("unknown_method", f"no entrypoint {method!r}")
    trace = chain.call_contract(contract_address, method, args, caller_pubkey, value)
    if trace.outcome == "out_of_gas":
        raise OperationError("out_of_gas", "step budget exceeded")
    return trace


def self_destruct(chain, contract_address: str, caller_pubkey: str) -> str:
    """Destroy a contract via its owner; returns the destruct tx id."""
    deployed = chain.state.contracts.get(contract_address)
    if deployed is None:
        raise OperationError("not_deployed", f"no contract at {contract_address}")
    cstate = chain.state.contract_states[contract_address]
    if cstate.status == STATUS_SELF_DESTRUCTED:
        raise OperationError("already_destroyed", "contract already destroyed")
    caller = chain.address_for(caller_pubkey)
    if caller != deployed.owner:
        raise OperationError("unauthorized", "only the owner may destroy")
    return chain.self_destruct_contract(contract_address, caller_pubkey)


# ---------------------------------------------------------------------------
# fixture contracts

# Storage layout shared by the fixtures:
#   slot 0 = aggregate value (total supply / total pledged)
#   slot 1 = owner address
#   slot 2 = terminate flag (checked by the prologue of every method)
#   slot <holder address> = per-holder value

TOKEN_SOURCE = """\
; storage-backed token: slot 0 total supply, slot 1 owner, slot <addr> balance
.method init 1
init:
  push 2
  sload
  push @dead
  jumpi
  dup 1
  push 0
  sstore
  caller
  dup 1
  push 1
  sstore
  sstore
  push 1
  return
.method total_supply 0
total_supply:
  push 2
  sload
  push @dead
  jumpi
  push 0
  sload
  return
.method owner 0
owner:
  push 2
  sload
  push @dead
  jumpi
  push 1
  sload
  return
.method balance_of 1
balance_of:
  push 2
  sload
  push @dead
  jumpi
  sload
  return
.method transfer 2
transfer:
  push 2
  sload
  push @dead
  jumpi
  caller
  sload
  dup 1
  dup 3
  lt
  push @dead
  jumpi
  dup 2
  sub
  caller
  sstore
  dup 2
  sload
  add
  swap 1
  sstore
  push 1
  return
.method mint 2
mint:
  push 2
  sload
  push @dead
  jumpi
  caller
  push 1
  sload
  eq
  push @mint_ok
  jumpi
  revert
mint_ok:
  dup 1
  push 0
  sload
  add
  push 0
  sstore
  dup 2
  sload
  add
  swap 1
  sstore
  push 1
  return
.method burn 1
burn:
  push 2
  sload
  push @dead
  jumpi
  caller
  sload
  dup 1
  dup 3
  lt
  push @dead
  jumpi
  dup 2
  sub
  caller
  sstore
  push 0
  sload
  dup 2
  sub
  push 0
  sstore
  pop
  push 1
  return
.method terminate 0
terminate:
  push 2
  sload
  push @dead
  jumpi
  caller
  push 1
  sload
  eq
  push @term_ok
  jumpi
  revert
term_ok:
  burnflag
  push 1
  return
.method destroy 0
destroy:
  caller
  push 1
  sload
  eq
  push @destroy_ok
  jumpi
  revert
destroy_ok:
  selfdestruct
dead:
  revert
"""

PLEDGE_SOURCE = """\
; pledge book: slot 0 total pledged, slot 1 owner, slot <addr> pledged amount
.method init 0
init:
  caller
  push 1
  sstore
  push 1
  return
.method pledge 0
pledge:
  push 2
  sload
  push @dead
  jumpi
  caller
  sload
  callvalue
  add
  caller
  sstore
  push 0
  sload
  callvalue
  add
  push 0
  sstore
  push 1
  return
.method pledged_of 1
pledged_of:
  push 2
  sload
  push @dead
  jumpi
  sload
  return
.method total 0
total:
  push 2
  sload
  push @dead
  jumpi
  push 0
  sload
  return
.method forward 2
forward:
  push 2
  sload
  push @dead
  jumpi
  caller
  push 1
  sload
  eq
  push @fwd_ok
  jumpi
  revert
fwd_ok:
  swap 1
  emit_tx
  push 1
  return
.method terminate 0
terminate:
  caller
  push 1
  sload
  eq
  push @pt_ok
  jumpi
  revert
pt_ok:
  burnflag
  push 1
  return
dead:
  revert
"""

MINIMAL_SOURCE = """\
.method main 0
main:
  push 1
  return
"""


def token_code(dialect: str = "dialectA") -> ContractCode:
    return assemble(TOKEN_SOURCE, dialect)


def pledge_code(dialect: str = "dialectA") -> ContractCode:
    return assemble(PLEDGE_SOURCE, dialect)


def minimal_code(dialect: str = "dialectA") -> ContractCode:
    return assemble(MINIMAL_SOURCE, dialect)
