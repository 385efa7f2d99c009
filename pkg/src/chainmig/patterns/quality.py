"""Did the migration actually carry what it promised?

`app_state_fingerprint` reduces a chain to the application-level facts
(balances, token holdings, contract code digest, status, and logical
storage) with chain bookkeeping (nonces, key registration) excluded.
`measure_quality` compares a source snapshot against a live target
through the mapping table and reports completeness, value conservation
within the declared fee allowance, and provenance coverage.
"""

from __future__ import annotations

from ..canonical import canonical_json, hexdigest
from ..errors import OperationError
from ..ledger import ChainInstance, derive_address
from .capture import MappingTable
from .poe import PoEStore, audit_store


def app_state_fingerprint(chain: ChainInstance, scope="all") -> dict:
    """address -> application-level record, nonces and keys excluded."""
    out = {}
    for address in chain.app_addresses(scope):
        acct = chain.state.accounts.get(address)
        rec: dict = {
            "native": acct.native if acct else 0,
            "tokens": {t: v for t, v in sorted((acct.tokens if acct else {}).items()) if v},
        }
        deployed = chain.state.contracts.get(address)
        if deployed is not None:
            cstate = chain.state.contract_states[address]
            rec["contract"] = {
                "code_digest": deployed.code.code_digest(),
                "status": cstate.status,
                "logical": {
                    str(k): v
                    for k, v in sorted(cstate.logical_items(deployed.code.dialect).items())
                    if v
                },
            }
        out[address] = rec
    return out


def fingerprint_digest(fingerprint: dict) -> str:
    return hexdigest(canonical_json(fingerprint))


def _target_address(
    source_address: str, rec: dict, target: ChainInstance, mapping: MappingTable | None
) -> str:
    if mapping is not None:
        entry = mapping.by_source(source_address)
        if entry is not None:
            return entry.target_id
    public_key = rec.get("public_key") or None
    if public_key:
        return derive_address(public_key, target.config.id_scheme)
    return source_address


def measure_quality(
    snapshot: dict,
    target: ChainInstance,
    mapping: MappingTable | None = None,
    fee_allowance: int = 0,
    poe_store: PoEStore | None = None,
    native_expected: bool = True,
) -> dict:
    """Score the target against the snapshot, leaving an audit trail.

    Completeness counts accounts whose tokens (and contracts whose code
    status and logical storage) arrived intact.  Native value is scored
    separately: carried exactly, or drifting by at most `fee_allowance`
    in total (fees are the one legitimate leak).  With a store at hand,
    every anchored digest is audited both ways.
    """
    accounts = snapshot.get("accounts", {})
    contracts = snapshot.get("contracts", {})
    matched = 0
    total = 0
    native_matches = 0
    native_source_total = 0
    native_target_total = 0
    excluded = []
    mismatches = []

    for source_address in sorted(accounts, key=bytes.fromhex):
        rec = accounts[source_address]
        total += 1
        target_address = _target_address(source_address, rec, target, mapping)
        entry = mapping.by_source(source_address) if mapping is not None else None
        if entry is not None and entry.note.startswith("excluded"):
            excluded.append({"address": source_address, "reason": entry.note})
            continue
        source_tokens = {t: v for t, v in rec.get("tokens", {}).items() if v}
        acct = target.state.accounts.get(target_address)
        target_tokens = (
            {t: v for t, v in acct.tokens.items() if v} if acct is not None else {}
        )
        row_ok = True
        if source_address in contracts:
            code_rec = contracts[source_address]
            state_rec = snapshot.get("contract_states", {}).get(source_address, {})
            deployed = target.state.contracts.get(target_address)
            if deployed is None:
                row_ok = False
                mismatches.append({"address": source_address, "field": "contract_missing"})
            else:
                cstate = target.state.contract_states[target_address]
                want_logical = {k: v for k, v in state_rec.get("logical", {}).items() if v}
                have_logical = {
                    str(k): v
                    for k, v in cstate.logical_items(deployed.code.dialect).items()
                    if v
                }
                if want_logical != have_logical:
                    row_ok = False
                    mismatches.append({"address": source_address, "field": "contract_storage"})
                if state_rec.get("status", "active") != cstate.status:
                    row_ok = False
                    mismatches.append({"address": source_address, "field": "contract_status"})
        elif source_tokens != target_tokens:
            row_ok = False
            mismatches.append(
                {
                    "address": source_address,
                    "field": "tokens",
                    "source": source_tokens,
                    "target": target_tokens,
                }
            )
        if row_ok:
            matched += 1
        source_native = rec.get("native", 0)
        target_native = acct.native if acct is not None else 0
        native_source_total += source_native
        native_target_total += target_native
        if source_native == target_native:
            native_matches += 1

    native_delta = native_source_total - native_target_total
    conservation_ok = (
        abs(native_delta) <= fee_allowance if native_expected else True
    )
    poe_report = None
    if poe_store is not None:
        poe_report = audit_store(target, poe_store)

    completeness = matched / total if total else 1.0
    report = {
        "kind": "quality_report",
        "target_chain_id": target.chain_id,
        "source_snapshot_digest": snapshot.get("digest", ""),
        "accounts_total": total,
        "accounts_matched": matched,
        "completeness": completeness,
        "native_matches": native_matches,
        "native_source_total": native_source_total,
        "native_target_total": native_target_total,
        "native_delta": native_delta,
        "fee_allowance": fee_allowance,
        "conservation_ok": conservation_ok,
        "mismatches": mismatches,
        "excluded": excluded,
        "poe_audit": poe_report,
        "ok": (
            completeness == 1.0
            and conservation_ok
            and (poe_report is None or poe_report["ok"])
        ),
    }
    return report
