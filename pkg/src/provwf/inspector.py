"""Dataset inspection: scan a cohort tree, extract metadata, register ROOT artifacts.

Metadata comes from a pluggable extractor chain. The default extractor reads
a sibling ``<file>.meta.json`` sidecar (a flat key -> scalar map standing in
for embedded headers); a missing sidecar degrades to PARTIAL with only the
format tag, a malformed one to CORRUPT with whatever prefix was recoverable.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .canonical import hash_file, sha256_hex
from .contract import Artifact, ProvenanceRecord, Registry
from .errors import IoError
from .values import MISSING, flatten, kind_of

OK = "OK"
PARTIAL = "PARTIAL"
CORRUPT = "CORRUPT"

SIDECAR_SUFFIX = ".meta.json"

# Extension -> default artifact type; a sidecar "type" key overrides.
_EXTENSION_TYPES = [
    (".nii.gz", "nifti_image"),
    (".nii", "nifti_image"),
    (".dcm", "dicom_series"),
    (".csv", "table"),
    (".tsv", "table"),
    (".json", "record"),
    (".zip", "archive"),
    (".tar.gz", "archive"),
    (".tgz", "archive"),
    (".tar", "archive"),
    (".log", "log"),
]

INVENTORY_COLUMNS = [
    "path", "subject", "session", "type", "modality", "manufacturer",
    "slice_thickness_mm", "voxel_spacing_mm", "status", "content_hash",
]


@dataclass
class FileRecord:
    path: str  # relative, forward slashes
    subject: str
    session: str
    size_bytes: int
    content_hash: str
    artifact_type: str
    attributes: dict[str, Any] = field(default_factory=dict)
    status: str = OK


@dataclass
class InspectionSummary:
    file_count: int
    subject_count: int
    session_count: int
    modality_counts: dict[str, int]
    type_counts: dict[str, int]
    organization: str  # flat | subject-nested | subject-session-nested | mixed
    prior_processing: list[str]  # artifact types with DERIVED records present
    manufacturers: list[str]
    slice_thickness_range: tuple[float, float] | None
    status_counts: dict[str, int]

    def to_attributes(self) -> dict[str, Any]:
        """Flatten into dotted scalar paths for registration as an artifact."""
        attrs: dict[str, Any] = {
            "file_count": self.file_count,
            "subject_count": self.subject_count,
            "session_count": self.session_count,
            "organization": self.organization,
            "prior_processing": ",".join(self.prior_processing),
            "manufacturers": ",".join(self.manufacturers),
        }
        for mod, n in self.modality_counts.items():
            attrs[f"counts.modality.{mod}"] = n
        for t, n in self.type_counts.items():
            attrs[f"counts.type.{t}"] = n
        for s, n in self.status_counts.items():
            attrs[f"counts.status.{s}"] = n
        if self.slice_thickness_range is not None:
            attrs["slice_thickness_min"] = self.slice_thickness_range[0]
            attrs["slice_thickness_max"] = self.slice_thickness_range[1]
        return attrs


class ScopeMapping:
    """Maps a relative file path to (subject, session) coordinates.

    The pattern names consecutive directory levels, e.g. the default
    "{subject}/{session}" takes the first directory as subject and the
    second as session. Files above a named level get empty coordinates.
    """

    def __init__(self, pattern: str = "{subject}/{session}"):
        names = re.findall(r"\{([a-z_]+)\}", pattern)
        if not set(names) <= {"subject", "session"}:
            raise ValueError(f"scope pattern may only name subject/session, got {pattern!r}")
        self.levels = names

    def scope_of(self, relative_path: str) -> tuple[str, str]:
        directories = relative_path.split("/")[:-1]
        subject = session = ""
        for i, name in enumerate(self.levels):
            if i < len(directories):
                if name == "subject":
                    subject = directories[i]
                else:
                    session = directories[i]
        return subject, session


def format_tag(path: str) -> str:
    lower = path.lower()
    for ext, _ in _EXTENSION_TYPES:
        if lower.endswith(ext):
            return ext.lstrip(".")
    suffix = Path(lower).suffix
    return suffix.lstrip(".") if suffix else "none"


def type_for(path: str, attributes: dict[str, Any]) -> str:
    declared = attributes.get("type")
    if isinstance(declared, str) and declared:
        return declared
    lower = path.lower()
    for ext, artifact_type in _EXTENSION_TYPES:
        if lower.endswith(ext):
            return artifact_type
    return "opaque_file"


_SALVAGE = re.compile(
    r'"([^"\\]+)"\s*:\s*('
    r'"(?:[^"\\]|\\.)*"'                                   # complete string
    r'|(?:-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?|true|false|null)(?=\s*[,}\]])'  # delimited scalar
    r")"
)


def _salvage_json_prefix(text: str) -> dict[str, Any]:
    """Recover leading key/value pairs from truncated JSON.

    Numbers and keywords are only trusted when a delimiter follows; a value
    cut mid-token must not come back looking valid.
    """
    recovered: dict[str, Any] = {}
    for m in _SALVAGE.finditer(text):
        try:
            recovered[m.group(1)] = json.loads(m.group(2))
        except json.JSONDecodeError:
            continue
    return recovered


def default_extractor(path: Path) -> tuple[dict[str, Any], str]:
    """Sidecar-based extractor: returns (attributes, status)."""
    rel_format = format_tag(path.name)
    attributes: dict[str, Any] = {"format": rel_format}
    sidecar = Path(str(path) + SIDECAR_SUFFIX)
    if not sidecar.exists():
        return attributes, PARTIAL
    try:
        raw = sidecar.read_text(encoding="utf-8")
    except OSError:
        return attributes, CORRUPT
    try:
        doc = json.loads(raw)
        if not isinstance(doc, dict):
            raise json.JSONDecodeError("not an object", raw, 0)
    except json.JSONDecodeError:
        salvaged = {k: v for k, v in _salvage_json_prefix(raw).items() if kind_of(v) is not None or v is None}
        attributes.update({k: (MISSING if v is None else v) for k, v in salvaged.items()})
        return attributes, CORRUPT
    status = OK
    for key, value in flatten(doc).items():  # nested maps become dotted paths
        if value is None:
            attributes[key] = MISSING
        elif kind_of(value) is not None:
            attributes[key] = value
        else:
            status = CORRUPT  # lists and other non-scalars break the flat contract
    return attributes, status


Extractor = Callable[[Path], "tuple[dict[str, Any], str] | None"]


def extract_metadata(path: Path, extractors: list[Extractor] | None = None) -> tuple[dict[str, Any], str]:
    """Run the extractor chain; the first non-None result wins."""
    for extractor in extractors or []:
        result = extractor(path)
        if result is not None:
            return result
    return default_extractor(path)


def scan(
    root: str | Path,
    scope_mapping: ScopeMapping | None = None,
    extractors: list[Extractor] | None = None,
) -> list[FileRecord]:
    """Deterministic, path-sorted records for every data file under root.

    Sidecar ``*.meta.json`` files are header surrogates, not data: they feed
    attribute extraction and are not inventoried themselves. Unreadable
    files yield CORRUPT records; the scan always continues.
    """
    root = Path(root)
    if not root.is_dir():
        raise IoError(f"dataset root {root} does not exist or is not a directory")
    mapping = scope_mapping or ScopeMapping()
    records = []
    paths = sorted(
        p for p in root.rglob("*")
        if p.is_file() and not p.name.endswith(SIDECAR_SUFFIX)
    )
    for path in paths:
        rel = path.relative_to(root).as_posix()
        subject, session = mapping.scope_of(rel)
        try:
            content_hash = hash_file(path)
            size = path.stat().st_size
        except OSError:
            records.append(
                FileRecord(
                    path=rel, subject=subject, session=session, size_bytes=0,
                    content_hash="", artifact_type=type_for(rel, {}),
                    attributes={"format": format_tag(rel)}, status=CORRUPT,
                )
            )
            continue
        attributes, status = extract_metadata(path, extractors)
        records.append(
            FileRecord(
                path=rel,
                subject=subject,
                session=session,
                size_bytes=size,
                content_hash=content_hash,
                artifact_type=type_for(rel, attributes),
                attributes=attributes,
                status=status,
            )
        )
    return records


def _root_artifact(record: FileRecord) -> Artifact:
    attributes = dict(record.attributes)
    attributes.pop("type", None)  # already lifted into artifact_type
    attributes["size_bytes"] = record.size_bytes
    attributes["extraction_status"] = record.status
    return Artifact(
        artifact_type=record.artifact_type,
        logical_name=record.path,
        subject=record.subject,
        session=record.session,
        attributes=attributes,
        provenance=ProvenanceRecord(kind="ROOT"),
        content_hash=record.content_hash,
        payload_path=record.path,
    )


def inventory_csv_bytes(records: list[FileRecord]) -> bytes:
    """The ``data_inventory.csv`` payload; column order is part of the format."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(INVENTORY_COLUMNS)
    for r in sorted(records, key=lambda r: r.path):
        def cell(key):
            v = r.attributes.get(key, "")
            return "MISSING" if v is MISSING else v
        writer.writerow([
            r.path, r.subject, r.session, r.artifact_type,
            cell("modality"), cell("manufacturer"),
            cell("slice_thickness_mm"), cell("voxel_spacing_mm"),
            r.status, r.content_hash,
        ])
    return buf.getvalue().encode("utf-8")


def build_inventory(
    registry: Registry,
    records: list[FileRecord],
    payload_dir: str | Path | None = None,
    run_id: str = "",
) -> tuple[list[str], Artifact]:
    """Register one ROOT artifact per record plus the dataset inventory.

    Idempotent: identical trees produce identical content-derived ids, so a
    second pass adds nothing.
    """
    ids = [registry.register(_root_artifact(r), run_id=run_id) for r in records]

    csv_bytes = inventory_csv_bytes(records)
    payload_path = ""
    if payload_dir is not None:
        payload_dir = Path(payload_dir)
        payload_dir.mkdir(parents=True, exist_ok=True)
        (payload_dir / "data_inventory.csv").write_bytes(csv_bytes)
        payload_path = "derived/data_inventory.csv"
    inventory = Artifact(
        artifact_type="inventory",
        logical_name="data_inventory",
        attributes={"row_count": len(records)},
        provenance=ProvenanceRecord(kind="ROOT"),
        content_hash=sha256_hex(csv_bytes),
        payload_path=payload_path,
    )
    registry.register(inventory, run_id=run_id)
    return ids, inventory


def _classify_organization(registry: Registry) -> str:
    shapes = set()
    for a in registry:
        if a.provenance.kind != "ROOT" or not a.payload_path or a.artifact_type == "inventory":
            continue
        if a.subject and a.session:
            shapes.add("subject-session-nested")
        elif a.subject:
            shapes.add("subject-nested")
        else:
            shapes.add("flat")
    if not shapes:
        return "flat"
    return shapes.pop() if len(shapes) == 1 else "mixed"


def summarize(registry: Registry, run_id: str = "") -> InspectionSummary:
    """Dataset summary computed solely from registry lookups, then registered."""
    roots = [a for a in registry if a.provenance.kind == "ROOT" and a.artifact_type not in ("inventory", "inspection_summary")]
    modality_counts: dict[str, int] = {}
    type_counts: dict[str, int] = {}
    status_counts: dict[str, int] = {}
    manufacturers: set[str] = set()
    thicknesses: list[float] = []
    for a in roots:
        modality = a.attributes.get("modality")
        if isinstance(modality, str):
            modality_counts[modality] = modality_counts.get(modality, 0) + 1
        type_counts[a.artifact_type] = type_counts.get(a.artifact_type, 0) + 1
        status = a.attributes.get("extraction_status")
        if isinstance(status, str):
            status_counts[status] = status_counts.get(status, 0) + 1
        manufacturer = a.attributes.get("manufacturer")
        if isinstance(manufacturer, str):
            manufacturers.add(manufacturer)
        thickness = a.attributes.get("slice_thickness_mm")
        if isinstance(thickness, (int, float)) and not isinstance(thickness, bool):
            thicknesses.append(float(thickness))

    derived_types = sorted({a.artifact_type for a in registry if a.provenance.kind == "DERIVED"})
    scopes = {a.scope for a in roots if a.scope != ("", "")}
    summary = InspectionSummary(
        file_count=len(roots),
        subject_count=len({s for s, _ in scopes}),
        session_count=len(scopes),
        modality_counts=modality_counts,
        type_counts=type_counts,
        organization=_classify_organization(registry),
        prior_processing=derived_types,
        manufacturers=sorted(manufacturers),
        slice_thickness_range=(min(thicknesses), max(thicknesses)) if thicknesses else None,
        status_counts=status_counts,
    )
    artifact = Artifact(
        artifact_type="inspection_summary",
        logical_name="inspection_summary",
        attributes=summary.to_attributes(),
        provenance=ProvenanceRecord(kind="ROOT"),
        content_hash="",
    )
    registry.register(artifact, run_id=run_id)
    return summary


def inspect_dataset(
    root: str | Path,
    registry: Registry,
    payload_dir: str | Path | None = None,
    scope_mapping: ScopeMapping | None = None,
    run_id: str = "",
) -> InspectionSummary:
    """scan + build_inventory + summarize in one sweep."""
    records = scan(root, scope_mapping=scope_mapping)
    build_inventory(registry, records, payload_dir=payload_dir, run_id=run_id)
    return summarize(registry, run_id=run_id)
