"""Scenario-driven planning: which moves fit a migration, in what order.

The core is a 16-pattern by 6-scenario applicability matrix plus a set
of config predicates that resolve its "maybe" cells (and veto plans
that are physically impossible, like forking a chain that forbids
forks).  `validate_plan` checks a declared pipeline against matrix,
ordering, fidelity, and config rules; `suggest_pipeline` enumerates the
minimal valid pipelines for a situation and prices them; the quality
scorer turns a finished run into pass/fail metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import contracts as vm
from .errors import OperationError
from .ledger import ChainConfig, ChainInstance, compatible_platforms, fee_sink
from .patterns.capture import MappingTable
from .patterns.poe import PoEStore
from .patterns.quality import measure_quality as _state_quality

SCENARIOS = (
    "transferring",
    "upgrading",
    "consolidating",
    "splitting",
    "sharding",
    "archiving",
)

# least to most history carried over
FIDELITY_LEVELS = (
    "fresh_start",
    "state_only",
    "state_and_txs",
    "genesis_and_txs",
    "full_history",
)

APPLICABLE = "applicable"
MAYBE = "maybe"
NOT_APPLICABLE = "not_applicable"

PATTERNS = (
    "snapshotting",
    "state_aggregation",
    "token_burning",
    "mapping_table",
    "node_sync",
    "establish_genesis",
    "hard_fork",
    "state_initialization",
    "exchange_transfer",
    "transaction_replay",
    "sharding",
    "vm_emulation",
    "smart_contract_translation",
    "measure_migration_quality",
    "off_chain_data_storage",
    "encrypting_on_chain_data",
)

_Y, _M, _N = APPLICABLE, MAYBE, NOT_APPLICABLE

# rows in PATTERNS order, columns in SCENARIOS order
_MATRIX_ROWS = {
    "snapshotting":               (_Y, _Y, _Y, _Y, _N, _Y),
    "state_aggregation":          (_N, _Y, _Y, _Y, _N, _N),
    "token_burning":              (_N, _Y, _Y, _Y, _N, _N),
    "mapping_table":              (_Y, _Y, _Y, _Y, _N, _Y),
    "node_sync":                  (_M, _N, _N, _M, _Y, _M),
    "establish_genesis":          (_M, _M, _N, _M, _N, _M),
    "hard_fork":                  (_N, _Y, _M, _N, _N, _M),
    "state_initialization":       (_Y, _Y, _Y, _Y, _N, _Y),
    "exchange_transfer":          (_N, _Y, _Y, _Y, _N, _N),
    "transaction_replay":         (_Y, _Y, _Y, _Y, _N, _M),
    "sharding":                   (_N, _N, _N, _N, _Y, _N),
    "vm_emulation":               (_N, _M, _M, _N, _N, _N),
    "smart_contract_translation": (_N, _Y, _Y, _N, _N, _N),
    "measure_migration_quality":  (_N, _Y, _Y, _Y, _N, _Y),
    "off_chain_data_storage":     (_N, _Y, _Y, _Y, _N, _Y),
    "encrypting_on_chain_data":   (_N, _Y, _Y, _Y, _N, _Y),
}

APPLICABILITY_MATRIX = {
    (pattern, scenario): cell
    for pattern, row in _MATRIX_ROWS.items()
    for scenario, cell in zip(SCENARIOS, row)
}


def applicability(pattern: str, scenario: str) -> str:
    if pattern not in PATTERNS:
        raise OperationError("unknown_pattern", f"no pattern {pattern!r}")
    if scenario not in SCENARIOS:
        raise OperationError("unknown_scenario", f"no scenario {scenario!r}")
    return APPLICABILITY_MATRIX[(pattern, scenario)]


@dataclass(frozen=True)
class PlanStep:
    pattern: str
    params: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {"pattern": self.pattern, "params": dict(self.params)}

    @classmethod
    def from_doc(cls, doc) -> "PlanStep":
        if isinstance(doc, str):
            return cls(pattern=doc)
        return cls(pattern=doc["pattern"], params=dict(doc.get("params", {})))


@dataclass(frozen=True)
class MigrationPlan:
    """A declared migration: what is moving, how faithfully, and the
    ordered pattern pipeline that is supposed to accomplish it."""

    scenarios: tuple[str, ...]
    fidelity: str
    source: ChainConfig
    target: ChainConfig
    pipeline: tuple[PlanStep, ...] = ()
    privacy: bool = False
    decommission_source: bool = False
    target_is_new: bool = True
    large_artifacts: bool = False

    def to_doc(self) -> dict:
        return {
            "scenarios": sorted(self.scenarios),
            "fidelity": self.fidelity,
            "source": self.source.to_record(),
            "target": self.target.to_record(),
            "pipeline": [step.to_doc() for step in self.pipeline],
            "privacy": self.privacy,
            "decommission_source": self.decommission_source,
            "target_is_new": self.target_is_new,
            "large_artifacts": self.large_artifacts,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "MigrationPlan":
        return cls(
            scenarios=tuple(doc["scenarios"]),
            fidelity=doc["fidelity"],
            source=ChainConfig.from_record(doc["source"]),
            target=ChainConfig.from_record(doc["target"]),
            pipeline=tuple(PlanStep.from_doc(s) for s in doc.get("pipeline", [])),
            privacy=bool(doc.get("privacy", False)),
            decommission_source=bool(doc.get("decommission_source", False)),
            target_is_new=bool(doc.get("target_is_new", True)),
            large_artifacts=bool(doc.get("large_artifacts", False)),
        )

    def patterns(self) -> list[str]:
        return [step.pattern for step in self.pipeline]


def _source_dialects(config: ChainConfig) -> frozenset[str]:
    return vm.executable_dialects(config.vm_dialect)


def feasibility(pattern: str, plan: MigrationPlan) -> tuple[bool, str]:
    """Config-level go/no-go for one pattern under a plan's chains.

    These predicates resolve the matrix's maybe cells and catch plans
    the chains cannot physically execute; value-judgement patterns
    (privacy sealing, off-chain storage) key off plan flags instead.
    """
    source, target = plan.source, plan.target
    if pattern == "node_sync":
        if "baas" in (source.permission_mode, target.permission_mode):
            return False, "a baas endpoint exposes no node-level access to sync from"
        if not compatible_platforms(source, target):
            return False, "node data structures only interoperate between compatible platforms"
        return True, ""
    if pattern == "establish_genesis":
        if not plan.target_is_new:
            return False, "an established chain has already written its genesis block"
        if not target.allows_genesis_control:
            return False, "target grants no control over genesis content"
        return True, ""
    if pattern == "hard_fork":
        if not source.allows_hard_fork:
            return False, "source chain does not accept protocol forks"
        if not target.allows_hard_fork:
            return False, "target chain does not accept protocol forks"
        if not compatible_platforms(source, target):
            return False, "forked nodes cannot switch platform families"
        return True, ""
    if pattern == "exchange_transfer":
        if plan.target_is_new:
            return False, "no exchange lists a chain that does not exist yet"
        return True, ""
    if pattern == "transaction_replay":
        if "archiving" in plan.scenarios and target.tx_fee != 0:
            return False, "replaying history into an archive only pays off at zero fee"
        return True, ""
    if pattern == "vm_emulation":
        if source.vm_dialect == target.vm_dialect:
            return False, "engines already match; nothing to emulate"
        if not _source_dialects(source) <= _source_dialects(target):
            return False, "target engine cannot execute the source binaries"
        return True, ""
    if pattern == "smart_contract_translation":
        if _source_dialects(source) <= _source_dialects(target):
            return False, "target runs the source binaries as-is; translation is waste"
        return True, ""
    if pattern == "off_chain_data_storage":
        if not plan.large_artifacts:
            return False, "plan marks no artifacts for off-chain storage"
        return True, ""
    if pattern == "encrypting_on_chain_data":
        if not plan.privacy:
            return False, "plan declares no privacy requirement"
        return True, ""
    return True, ""


# patterns whose feasibility predicate is a physical impossibility when
# false, not a cost call; validate_plan flags these even on applicable cells
_HARD_GATED = frozenset(
    {
        "node_sync",
        "establish_genesis",
        "hard_fork",
        "exchange_transfer",
        "vm_emulation",
    }
)


def usable(pattern: str, plan: MigrationPlan) -> tuple[bool, str]:
    """Matrix plus predicates, across the plan's whole scenario set.

    A pattern is usable when at least one declared scenario admits it
    (maybe cells need their predicate to hold) and no hard gate fails.
    """
    cells = [applicability(pattern, s) for s in plan.scenarios]
    feasible, why = feasibility(pattern, plan)
    if pattern in _HARD_GATED and not feasible:
        return False, why
    admitted = False
    for scenario, cell in zip(plan.scenarios, cells):
        if cell == APPLICABLE:
            admitted = True
        elif cell == MAYBE and feasible:
            admitted = True
    if not admitted:
        if all(cell == NOT_APPLICABLE for cell in cells):
            rows = ", ".join(f"{pattern}/{s}" for s in plan.scenarios)
            return False, f"matrix marks {rows} not_applicable"
        return False, why or f"{pattern} has only unresolved maybe cells here"
    return True, ""


_LOAD_PATTERNS = ("node_sync", "establish_genesis", "hard_fork", "state_initialization", "exchange_transfer")
_SNAPSHOT_CONSUMERS = frozenset(
    {"establish_genesis", "state_initialization", "hard_fork", "transaction_replay", "token_burning"}
)
_HISTORY_CARRIERS = frozenset({"node_sync", "hard_fork"})
_ID_MINTERS = frozenset(
    {"establish_genesis", "state_initialization", "exchange_transfer", "transaction_replay", "hard_fork"}
)
_FRESH_START_ALLOWED = frozenset({"exchange_transfer", "measure_migration_quality"})


def validate_plan(plan: MigrationPlan) -> list[dict]:
    """Every matrix, ordering, fidelity, and config violation in a plan.

    An empty list means the plan is valid; violations are results, not
    errors, so a planning UI can show all of them at once.
    """
    violations: list[dict] = []

    def flag(rule: str, message: str, pattern: str | None = None, step: int | None = None):
        entry = {"rule": rule, "message": message}
        if pattern is not None:
            entry["pattern"] = pattern
        if step is not None:
            entry["step"] = step
        violations.append(entry)

    for scenario in plan.scenarios:
        if scenario not in SCENARIOS:
            flag("names", f"unknown scenario {scenario!r}")
    if not plan.scenarios:
        flag("names", "plan declares no scenario")
    if plan.fidelity not in FIDELITY_LEVELS:
        flag("names", f"unknown fidelity level {plan.fidelity!r}")
    for i, step in enumerate(plan.pipeline):
        if step.pattern not in PATTERNS:
            flag("names", f"unknown pattern {step.pattern!r}", step.pattern, i)
    if violations:
        return violations

    names = plan.patterns()
    position = {p: i for i, p in enumerate(names)}

    for i, pattern in enumerate(names):
        ok, why = usable(pattern, plan)
        if ok:
            continue
        cells = {s: applicability(pattern, s) for s in plan.scenarios}
        if all(c == NOT_APPLICABLE for c in cells.values()):
            flag("applicability", f"{pattern}: {why}", pattern, i)
        else:
            flag("feasibility", f"{pattern}: {why}", pattern, i)

    # ordering: extraction feeds every consumer of the snapshot
    if _SNAPSHOT_CONSUMERS & set(names):
        snap_at = position.get("snapshotting")
        for i, pattern in enumerate(names):
            if pattern in _SNAPSHOT_CONSUMERS and (snap_at is None or snap_at > i):
                flag("ordering", f"{pattern} needs an earlier snapshotting step", pattern, i)

    # replay rebuilds history onto loaded state, never into a void
    if "transaction_replay" in position:
        at = position["transaction_replay"]
        loads = [i for i, p in enumerate(names) if p in _LOAD_PATTERNS]
        if not any(i < at for i in loads):
            flag(
                "ordering",
                "transaction_replay needs a state load step before it",
                "transaction_replay",
                at,
            )

    # the id table is published after the steps that mint target ids
    if "mapping_table" in position:
        at = position["mapping_table"]
        minters = [i for i, p in enumerate(names) if p in _ID_MINTERS]
        if minters and at < min(minters):
            flag(
                "ordering",
                "mapping_table updates follow the steps that mint target ids",
                "mapping_table",
                at,
            )

    # fidelity gates: the pipeline must be able to deliver what the level promises
    if plan.fidelity == "fresh_start":
        for i, pattern in enumerate(names):
            if pattern not in _FRESH_START_ALLOWED:
                flag(
                    "fidelity",
                    f"fresh_start carries no data; {pattern} has nothing to do",
                    pattern,
                    i,
                )
    else:
        if not (set(names) & set(_LOAD_PATTERNS)):
            flag("fidelity", f"{plan.fidelity} needs a state load step")
    if plan.fidelity in ("state_and_txs", "genesis_and_txs"):
        if "transaction_replay" not in position and not (_HISTORY_CARRIERS & set(names)):
            flag(
                "fidelity",
                f"{plan.fidelity} promises transactions; add transaction_replay or a history-carrying load",
            )
    if plan.fidelity == "full_history":
        carried = bool(_HISTORY_CARRIERS & set(names))
        rebuilt = (
            "establish_genesis" in position
            and "transaction_replay" in position
            and "off_chain_data_storage" in position
        )
        if not carried and not rebuilt:
            flag(
                "fidelity",
                "full_history needs node_sync or hard_fork, or genesis plus replay plus "
                "off-chain block archives",
            )
    if "transaction_replay" in position and plan.fidelity in ("fresh_start", "state_only"):
        flag(
            "fidelity",
            f"transaction_replay exceeds the declared fidelity {plan.fidelity}",
            "transaction_replay",
            position["transaction_replay"],
        )

    return violations


# -- suggestion and pricing ----------------------------------------------


def _replay_required(fidelity: str) -> bool:
    return fidelity in ("state_and_txs", "genesis_and_txs", "full_history")


def suggest_pipeline(
    scenarios,
    fidelity: str,
    source_config: ChainConfig,
    target_config: ChainConfig,
    *,
    target_is_new: bool = True,
    privacy: bool = False,
    decommission_source: bool = False,
    large_artifacts: bool = False,
    counts: dict | None = None,
) -> list[dict]:
    """Every minimal valid pipeline for the situation, cheapest first.

    Each candidate is one load route (clone, genesis, fork, rebuild, or
    exchange) dressed with exactly the steps the fidelity level and plan
    flags force.  Raises no_valid_pipeline when no route survives."""
    scenarios = tuple(scenarios)
    probe = MigrationPlan(
        scenarios=scenarios,
        fidelity=fidelity,
        source=source_config,
        target=target_config,
        privacy=privacy,
        decommission_source=decommission_source,
        target_is_new=target_is_new,
        large_artifacts=large_artifacts,
    )
    base_violations = validate_plan(probe)
    if any(v["rule"] == "names" for v in base_violations):
        raise OperationError("unknown_scenario", base_violations[0]["message"])

    def ok(pattern: str) -> bool:
        return usable(pattern, probe)[0]

    candidates: list[list[str]] = []

    if fidelity == "fresh_start":
        candidates.append([])
    elif set(scenarios) == {"sharding"}:
        core = ["node_sync", "sharding"] if ok("node_sync") else ["sharding"]
        if ok("sharding"):
            candidates.append(core)
    else:
        contract_stage = None
        if ok("vm_emulation"):
            contract_stage = "vm_emulation"
        elif ok("smart_contract_translation"):
            contract_stage = "smart_contract_translation"
        for load in _LOAD_PATTERNS:
            if not ok(load):
                continue
            steps: list[str] = []
            # forks still start from a captured cut; clones do not
            if load != "node_sync":
                steps.append("snapshotting")
            if contract_stage and load != "node_sync":
                steps.append(contract_stage)
            steps.append(load)
            if _replay_required(fidelity) and load not in _HISTORY_CARRIERS:
                if not ok("transaction_replay"):
                    continue
                steps.append("transaction_replay")
            if fidelity == "full_history" and load not in _HISTORY_CARRIERS:
                if load != "establish_genesis" or not ok("off_chain_data_storage"):
                    continue
                steps.append("off_chain_data_storage")
            if decommission_source:
                if not ok("token_burning"):
                    continue
                if "snapshotting" not in steps:
                    steps.insert(0, "snapshotting")
                steps.append("token_burning")
            if load != "node_sync" and ok("mapping_table"):
                steps.append("mapping_table")
            if ok("measure_migration_quality"):
                steps.append("measure_migration_quality")
            if large_artifacts and ok("off_chain_data_storage") and "off_chain_data_storage" not in steps:
                steps.append("off_chain_data_storage")
            if privacy and ok("encrypting_on_chain_data"):
                steps.append("encrypting_on_chain_data")
            candidates.append(steps)

    priced = []
    seen = set()
    for steps in candidates:
        key = tuple(steps)
        if key in seen:
            continue
        seen.add(key)
        plan = MigrationPlan(
            scenarios=scenarios,
            fidelity=fidelity,
            source=source_config,
            target=target_config,
            pipeline=tuple(PlanStep(p) for p in steps),
            privacy=privacy,
            decommission_source=decommission_source,
            target_is_new=target_is_new,
            large_artifacts=large_artifacts,
        )
        if validate_plan(plan):
            continue
        priced.append(
            {
                "pipeline": list(steps),
                "cost": estimate_cost(plan, counts),
                "latency_blocks": estimate_latency(plan),
            }
        )
    if not priced:
        raise OperationError(
            "no_valid_pipeline", f"no pattern route fits {sorted(scenarios)} at {fidelity}"
        )
    priced.sort(key=lambda c: (c["cost"], c["latency_blocks"], c["pipeline"]))
    return priced


_DEFAULT_COUNTS = {"accounts": 0, "contracts": 0, "txs": 0, "value": 0, "commission_rate": 0.0}


def estimate_cost(plan: MigrationPlan, counts: dict | None = None) -> int:
    """Fees the pipeline will spend, from entity counts.

    Per step: state_initialization costs two transactions per account
    (create, then fund or set) plus one per contract; replay costs one
    per captured transaction; burning one per account; exchange routes
    cost a deposit and a payout per account plus the commission taken
    out of the moved value.  Reads, clones, and genesis writes are free.
    """
    c = dict(_DEFAULT_COUNTS)
    c.update(counts or {})
    accounts, contracts = int(c["accounts"]), int(c["contracts"])
    txs, value = int(c["txs"]), int(c["value"])
    src_fee, tgt_fee = plan.source.tx_fee, plan.target.tx_fee
    total = 0
    for step in plan.pipeline:
        p = step.pattern
        if p == "state_initialization":
            total += (2 * accounts + contracts) * tgt_fee
        elif p == "transaction_replay":
            total += txs * tgt_fee
        elif p == "token_burning":
            total += accounts * src_fee
        elif p == "state_aggregation" and step.params.get("mode") == "on_chain":
            total += accounts * src_fee
        elif p == "exchange_transfer":
            total += accounts * (src_fee + tgt_fee)
            total += int(value * float(c.get("commission_rate", 0.0)))
        elif p in ("vm_emulation", "smart_contract_translation"):
            total += contracts * tgt_fee
        elif p in ("mapping_table", "off_chain_data_storage"):
            total += tgt_fee  # one anchor transaction
    return total


def estimate_latency(plan: MigrationPlan) -> int:
    """Finality waits along the pipeline, in blocks."""
    waits = 0
    for step in plan.pipeline:
        p = step.pattern
        if p == "snapshotting":
            waits += plan.source.finality_depth
        elif p == "exchange_transfer":
            waits += plan.source.finality_depth + plan.target.finality_depth
        elif p in ("state_initialization", "transaction_replay", "hard_fork", "establish_genesis"):
            waits += plan.target.finality_depth
    return waits


# -- quality --------------------------------------------------------------


def measure_quality(
    plan: MigrationPlan,
    snapshot: dict,
    source: ChainInstance | None,
    target: ChainInstance,
    mapping: MappingTable | None = None,
    stage_reports=(),
    fee_allowance: int = 0,
    poe_store: PoEStore | None = None,
    start_head: int = 0,
) -> dict:
    """Score a finished run against its plan.

    Wraps the state-level scorer with run-wide accounting: fees sunk
    and transactions committed per chain, blocks of latency, and the
    excluded entities surfaced by stage reports.  `success` is strict:
    full completeness, conservation within the allowance, and clean
    provenance audits.
    """
    native_expected = plan.fidelity != "fresh_start" and not any(
        step.pattern == "exchange_transfer" for step in plan.pipeline
    )
    state = _state_quality(
        snapshot,
        target,
        mapping=mapping,
        fee_allowance=fee_allowance,
        poe_store=poe_store,
        native_expected=native_expected,
    )

    def chain_row(chain: ChainInstance | None) -> dict:
        if chain is None:
            return {"fee_total": 0, "tx_count": 0}
        return {
            "fee_total": chain.balance(fee_sink(chain.config.id_scheme)),
            "tx_count": sum(len(b.tx_list) for b in chain.blocks),
        }

    excluded = list(state["excluded"])
    for report in stage_reports:
        for entry in report.get("skipped", []) if isinstance(report, dict) else []:
            excluded.append(entry)

    report = {
        "kind": "migration_quality",
        "plan_fidelity": plan.fidelity,
        "scenarios": sorted(plan.scenarios),
        "state_completeness": state["completeness"],
        "value_conservation_delta": state["native_delta"],
        "fee_allowance": fee_allowance,
        "per_chain": {
            plan.source.chain_id: chain_row(source),
            plan.target.chain_id: chain_row(target),
        },
        "latency_blocks": target.head - start_head,
        "poe_audit": state["poe_audit"],
        "mismatches": state["mismatches"],
        "excluded": excluded,
        "success": state["ok"],
    }
    return report
