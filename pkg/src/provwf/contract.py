"""The artifact contract and the append-only registry.

An artifact is a tuple of (type, attributes, provenance) plus identity. Its
id is a pure function of the contract fields under canonical serialization:
run metadata (run_id, executor sequence) never participates, so the same
logical artifact produced on two machines, or in two runs, hashes to the
same id. The registry is an append-only log of such records with rebuildable
secondary indexes; registered records are never mutated or deleted.
"""

from __future__ import annotations

import csv
import json
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .canonical import canonical_json_bytes, sha256_hex
from .errors import ContractViolation, IntegrityError, NotFound
from .values import MISSING, check_attributes, from_jsonable, to_jsonable

ROOT = "ROOT"
DERIVED = "DERIVED"


@dataclass(frozen=True)
class ProvenanceRecord:
    """How an artifact came to be.

    ROOT records describe raw inputs found by inspection; DERIVED records
    name the producing rule, its fingerprint, the bound parameters, and the
    consumed artifact ids. run_id and sequence are bookkeeping only and are
    excluded from identity hashing.
    """

    kind: str = ROOT
    rule_id: str = ""
    rule_fingerprint: str = ""
    param_binding: Mapping[str, Any] = field(default_factory=dict)
    input_ids: tuple[str, ...] = ()
    run_id: str = ""
    sequence: int = 0

    def core(self) -> dict[str, Any]:
        """The provenance-core that participates in id hashing."""
        return {
            "kind": self.kind,
            "rule_id": self.rule_id,
            "rule_fingerprint": self.rule_fingerprint,
            "param_binding": {k: to_jsonable(v) for k, v in self.param_binding.items()},
            "input_ids": list(self.input_ids),
        }


@dataclass(frozen=True)
class Artifact:
    """One contract-compliant record: the only queryable unit of state."""

    artifact_type: str
    logical_name: str
    subject: str = ""
    session: str = ""
    attributes: Mapping[str, Any] = field(default_factory=dict)
    provenance: ProvenanceRecord = field(default_factory=ProvenanceRecord)
    content_hash: str = ""
    payload_path: str = ""

    @property
    def id(self) -> str:
        cached = self.__dict__.get("_id")
        if cached is None:
            cached = artifact_id(self)
            object.__setattr__(self, "_id", cached)
        return cached

    @property
    def scope(self) -> tuple[str, str]:
        return (self.subject, self.session)

    def is_dataset_level(self) -> bool:
        return self.subject == "" and self.session == ""

    def body(self) -> dict[str, Any]:
        """Canonical structure without id or run metadata."""
        return {
            "artifact_type": self.artifact_type,
            "logical_name": self.logical_name,
            "scope": {"subject": self.subject, "session": self.session},
            "attributes": {k: to_jsonable(v) for k, v in self.attributes.items()},
            "provenance": self.provenance.core(),
            "content_hash": self.content_hash,
            "payload_path": self.payload_path,
        }

    def record(self) -> dict[str, Any]:
        """Full storage record: body plus id and run metadata."""
        rec = self.body()
        rec["id"] = self.id
        rec["provenance"]["run_id"] = self.provenance.run_id
        rec["provenance"]["sequence"] = self.provenance.sequence
        return rec


def _check_invariants(artifact: Artifact) -> list[str]:
    violations = []
    if not artifact.artifact_type:
        violations.append("artifact_type is empty")
    if not isinstance(artifact.logical_name, str):
        violations.append("logical_name is not a string")
    violations.extend(check_attributes(artifact.attributes))
    prov = artifact.provenance
    if prov.kind not in (ROOT, DERIVED):
        violations.append(f"provenance kind {prov.kind!r} is not ROOT or DERIVED")
    if prov.kind == ROOT:
        if prov.rule_id or prov.rule_fingerprint or prov.param_binding or prov.input_ids:
            violations.append("ROOT provenance must have empty rule fields and inputs")
    else:
        if not prov.rule_id:
            violations.append("DERIVED provenance has empty rule_id")
        for name in prov.param_binding:
            bad = check_attributes({name: prov.param_binding[name]})
            violations.extend(f"param_binding: {v}" for v in bad)
    return violations


def canonical_serialize(artifact: Artifact) -> bytes:
    """Deterministic bytes for an artifact, run metadata omitted."""
    violations = _check_invariants(artifact)
    if violations:
        raise ContractViolation("; ".join(violations), violations)
    return canonical_json_bytes(artifact.body())


def artifact_id(artifact: Artifact) -> str:
    """Content-derived identifier: SHA-256 of the canonical bytes."""
    return sha256_hex(canonical_serialize(artifact))


def parse_record(record: Mapping[str, Any]) -> Artifact:
    """Rebuild an Artifact from a stored record (inverse of record())."""
    prov_raw = record.get("provenance", {})
    prov = ProvenanceRecord(
        kind=prov_raw.get("kind", ROOT),
        rule_id=prov_raw.get("rule_id", ""),
        rule_fingerprint=prov_raw.get("rule_fingerprint", ""),
        param_binding={k: from_jsonable(v) for k, v in prov_raw.get("param_binding", {}).items()},
        input_ids=tuple(prov_raw.get("input_ids", ())),
        run_id=prov_raw.get("run_id", ""),
        sequence=prov_raw.get("sequence", 0),
    )
    scope = record.get("scope", {})
    return Artifact(
        artifact_type=record.get("artifact_type", ""),
        logical_name=record.get("logical_name", ""),
        subject=scope.get("subject", ""),
        session=scope.get("session", ""),
        attributes={k: from_jsonable(v) for k, v in record.get("attributes", {}).items()},
        provenance=prov,
        content_hash=record.get("content_hash", ""),
        payload_path=record.get("payload_path", ""),
    )


_REQUIRED_FIELDS = ("artifact_type", "logical_name", "scope", "attributes", "provenance", "content_hash", "payload_path")


def validate_contract(record: Mapping[str, Any], known_ids: Iterable[str] | None = None) -> list[str]:
    """Exhaustively list contract violations of a raw parsed record.

    Returns an empty list for a compliant record. When known_ids is given,
    each unresolvable provenance input yields one violation.
    """
    violations: list[str] = []
    if not isinstance(record, Mapping):
        return ["record is not a map"]
    for name in _REQUIRED_FIELDS:
        if name not in record:
            violations.append(f"missing field '{name}'")
    if violations:
        return violations

    if not isinstance(record["scope"], Mapping):
        violations.append("scope is not a map")
    if not isinstance(record["attributes"], Mapping):
        violations.append("attributes is not a map")
    prov = record["provenance"]
    if not isinstance(prov, Mapping):
        violations.append("provenance is not a map")
    if violations:
        return violations

    artifact = parse_record(record)
    violations.extend(_check_invariants(artifact))

    input_ids = artifact.provenance.input_ids
    if not all(isinstance(i, str) for i in input_ids):
        violations.append("input_ids must be strings")
    elif known_ids is not None:
        known = set(known_ids)
        for missing_id in [i for i in input_ids if i not in known]:
            violations.append(f"provenance input '{missing_id}' is not registered")

    if not violations and "id" in record and record["id"] != artifact.id:
        violations.append("stored id does not match content-derived id")
    return violations


class Registry:
    """Append-only artifact log with rebuildable indexes.

    Writes are funneled through one lock (the single appender); reads only
    ever observe a consistent prefix because records are appended after
    validation and never mutated. When a backing path is given, every
    accepted record is appended to the JSON-Lines file as one canonical
    line, and the file is replayed on open.
    """

    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path is not None else None
        self._records: list[Artifact] = []
        self._by_id: dict[str, Artifact] = {}
        self._by_type: dict[str, list[Artifact]] = {}
        self._by_scope: dict[tuple[str, str], list[Artifact]] = {}
        self._lock = threading.Lock()
        if self._path is not None and self._path.exists():
            self._replay(self._path)

    # -- loading ----------------------------------------------------------

    def _replay(self, path: Path) -> None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    raw = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise IntegrityError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
                violations = validate_contract(raw, known_ids=self._by_id.keys())
                if violations:
                    raise ContractViolation(f"{path}:{lineno}: " + "; ".join(violations), violations)
                self._append(parse_record(raw))

    # -- writing ----------------------------------------------------------

    def register(self, artifact: Artifact, run_id: str | None = None) -> str:
        """Append an artifact; idempotent when the id is already present."""
        violations = _check_invariants(artifact)
        if violations:
            raise ContractViolation("; ".join(violations), violations)
        with self._lock:
            art_id = artifact.id
            if art_id in self._by_id:
                return art_id
            for input_id in artifact.provenance.input_ids:
                if input_id not in self._by_id:
                    raise IntegrityError(f"provenance input '{input_id}' is not registered")
            prov = replace(
                artifact.provenance,
                run_id=run_id if run_id is not None else artifact.provenance.run_id,
                sequence=len(self._records) + 1,
            )
            stored = replace(artifact, provenance=prov)
            self._append(stored)
            if self._path is not None:
                line = canonical_json_bytes(stored.record()) + b"\n"
                self._path.parent.mkdir(parents=True, exist_ok=True)
                with open(self._path, "ab") as fh:
                    fh.write(line)
            return art_id

    def _append(self, stored: Artifact) -> None:
        self._records.append(stored)
        self._by_id[stored.id] = stored
        self._by_type.setdefault(stored.artifact_type, []).append(stored)
        self._by_scope.setdefault(stored.scope, []).append(stored)

    # -- reading ----------------------------------------------------------

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[Artifact]:
        return iter(list(self._records))

    def __contains__(self, art_id: str) -> bool:
        return art_id in self._by_id

    @property
    def path(self) -> Path | None:
        return self._path

    def get(self, art_id: str) -> Artifact:
        try:
            return self._by_id[art_id]
        except KeyError:
            raise NotFound(f"artifact '{art_id}' is not registered") from None

    def lookup(
        self,
        artifact_type: str | None = None,
        subject: str | None = None,
        session: str | None = None,
        logical_name: str | None = None,
    ) -> list[Artifact]:
        """All records matching the given filters, in sequence order.

        None means "no filter"; pass empty strings to select the dataset
        level explicitly.
        """
        if artifact_type is not None:
            base: Iterable[Artifact] = self._by_type.get(artifact_type, ())
        elif subject is not None and session is not None:
            base = self._by_scope.get((subject, session), ())
        else:
            base = self._records
        out = []
        for a in base:
            if subject is not None and a.subject != subject:
                continue
            if session is not None and a.session != session:
                continue
            if logical_name is not None and a.logical_name != logical_name:
                continue
            out.append(a)
        return out

    def current(
        self, artifact_type: str, subject: str, session: str, logical_name: str
    ) -> Artifact | None:
        """Latest registered version for a (type, scope, name) coordinate.

        Supersession is modeled as registering a new record; the highest
        sequence number wins, older versions stay for provenance.
        """
        matches = self.lookup(artifact_type, subject, session, logical_name)
        return matches[-1] if matches else None

    def scopes(self) -> list[tuple[str, str]]:
        """Distinct non-dataset scopes, sorted."""
        return sorted(s for s in self._by_scope if s != ("", ""))

    def types(self) -> list[str]:
        return sorted(self._by_type)

    # -- integrity checks --------------------------------------------------

    def check_referential_closure(self) -> list[str]:
        """Full-scan check that every provenance input resolves."""
        problems = []
        for a in self._records:
            for input_id in a.provenance.input_ids:
                if input_id not in self._by_id:
                    problems.append(f"{a.id}: dangling input {input_id}")
        return problems

    def check_acyclic(self) -> bool:
        """Provenance edges (input -> artifact) form a DAG.

        Registration order is a topological order by construction (inputs
        must pre-exist), so a single pass suffices.
        """
        seen: set[str] = set()
        for a in self._records:
            if any(i not in seen for i in a.provenance.input_ids):
                return False
            seen.add(a.id)
        return True

    # -- exports -----------------------------------------------------------

    def export_csv(self, path: str | Path) -> None:
        """Flat CSV mirror for spreadsheet inspection (never authoritative).

        MISSING values render as the literal text MISSING; absent keys as
        empty cells.
        """
        attr_keys = sorted({k for a in self._records for k in a.attributes})
        header = [
            "sequence", "id", "artifact_type", "subject", "session",
            "logical_name", "payload_path", "content_hash",
        ] + attr_keys
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for a in self._records:
                row = [
                    a.provenance.sequence, a.id, a.artifact_type, a.subject,
                    a.session, a.logical_name, a.payload_path, a.content_hash,
                ]
                for key in attr_keys:
                    value = a.attributes.get(key, "")
                    row.append("MISSING" if value is MISSING else value)
                writer.writerow(row)
