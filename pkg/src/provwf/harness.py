"""Desk-scale evaluation harness: synthetic cohorts, adaptability metrics,
reproducibility trials, and the contract-vs-filename ablation.

Cohort generation is a pure function of (spec, seed): the same spec writes a
byte-identical tree every time, so content-derived artifact ids agree across
independent runs and DAG equivalence is meaningful.
"""

from __future__ import annotations

import json
import shutil
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from random import Random
from typing import Any, Iterable

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .contract import Registry
from .errors import ProvwfError, Unavailable, Unfinished
from .executor import MockRunner, RunPaths, build_dag, canonicalize_dag, execute
from .inspector import inspect_dataset
from .predicates import TRUE
from .query import parse_predicate
from .rules import Catalog, load_catalog
from .session import PlanningSession, count_pl, replay_dialog
from .values import MISSING

_MODALITY_EXT = {"CT": ".dcm", "MR": ".nii", "PT": ".dcm", "US": ".jpg"}


@dataclass
class CohortSpec:
    subjects: int = 3
    sessions_min: int = 1
    sessions_max: int = 2
    total_sessions: int | None = None  # exact session total, adjusted deterministically
    files_per_session: int = 1
    primary_type: str = "raw_series"
    modalities: tuple[str, ...] = ("CT",)
    manufacturers: tuple[str, ...] = ("Siemens", "Philips")
    slice_thickness_range: tuple[float, float] = (0.5, 3.0)
    voxel_spacing_range: tuple[float, float] = (0.5, 2.0)
    duplicate_kernel_prob: float = 0.0
    corrupt_sidecar_prob: float = 0.0
    nested_archive_prob: float = 0.0
    kernels: tuple[str, ...] = ("soft", "sharp")
    seed: int = 0

    @classmethod
    def from_table(cls, table: dict) -> "CohortSpec":
        spec = cls()
        for key, value in table.items():
            if not hasattr(spec, key):
                raise ProvwfError(f"cohort spec has unknown key '{key}'")
            current = getattr(spec, key)
            if isinstance(current, tuple) and isinstance(value, list):
                value = tuple(value)
            setattr(spec, key, value)
        return spec

    @classmethod
    def from_toml(cls, text: str) -> "CohortSpec":
        doc = tomllib.loads(text)
        return cls.from_table(doc.get("cohort", doc))


def _session_counts(spec: CohortSpec, rng: Random) -> list[int]:
    counts = [rng.randint(spec.sessions_min, spec.sessions_max) for _ in range(spec.subjects)]
    if spec.total_sessions is not None:
        # nudge counts round-robin until the exact total is hit
        i = 0
        while sum(counts) != spec.total_sessions and spec.subjects:
            delta = 1 if sum(counts) < spec.total_sessions else -1
            if counts[i % spec.subjects] + delta >= 1:
                counts[i % spec.subjects] += delta
            i += 1
    return counts


def generate_cohort(spec: CohortSpec, root: str | Path) -> Path:
    """Write the synthetic cohort tree; deterministic for a given spec."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = Random(spec.seed)
    session_counts = _session_counts(spec, rng)
    for si in range(spec.subjects):
        subject = f"S{si + 1:03d}"
        for ei in range(session_counts[si]):
            session = f"ses{ei + 1:02d}"
            session_dir = root / subject / session
            session_dir.mkdir(parents=True, exist_ok=True)
            duplicate = rng.random() < spec.duplicate_kernel_prob
            kernel_count = 2 if duplicate else 1
            for fi in range(spec.files_per_session):
                modality = spec.modalities[(si + ei + fi) % len(spec.modalities)]
                ext = _MODALITY_EXT.get(modality, ".dat")
                for ki in range(kernel_count):
                    kernel = spec.kernels[ki % len(spec.kernels)]
                    name = f"series{fi + 1:02d}" + (f"_{kernel}" if duplicate else "") + ext
                    payload = f"{subject}/{session}/{name}:{rng.getrandbits(64):016x}"
                    (session_dir / name).write_bytes(payload.encode())
                    # type and modality lead the record: corruption truncates
                    # the tail, so damaged headers lose attributes but keep
                    # their series identity (as real corrupt headers tend to)
                    meta = {
                        "type": spec.primary_type,
                        "modality": modality,
                        "manufacturer": rng.choice(list(spec.manufacturers)),
                        "slice_thickness_mm": round(rng.uniform(*spec.slice_thickness_range), 2),
                        "voxel_spacing_mm": round(rng.uniform(*spec.voxel_spacing_range), 2),
                        "body_part": "CHEST" if modality == "CT" else "HEAD",
                    }
                    if duplicate:
                        meta["reconstruction_kernel"] = kernel
                    sidecar = json.dumps(meta)
                    if rng.random() < spec.corrupt_sidecar_prob:
                        sidecar = sidecar[: max(40, len(sidecar) * 2 // 3)]
                    (session_dir / (name + ".meta.json")).write_text(sidecar, encoding="utf-8")
            if rng.random() < spec.nested_archive_prob:
                blob = rng.getrandbits(128).to_bytes(16, "big")
                (session_dir / "extras.zip").write_bytes(b"PK\x03\x04" + blob)
    return root


# -- adaptability metrics ------------------------------------------------------


def irm(proposed: Iterable[str], ground_truth: Iterable[str]) -> float:
    """Initial rule matching: percent of ground-truth rules in the proposal,
    one decimal."""
    gt = set(ground_truth)
    if not gt:
        raise ProvwfError("ground-truth rule set is empty; IRM undefined")
    ratio = Fraction(len(set(proposed) & gt), len(gt))
    return round(float(100 * ratio), 1)


@dataclass
class GroundTruthConfig:
    rules: tuple[str, ...]
    final_output_type: str
    final_output_where: str = ""

    def check(self, catalog: Catalog) -> None:
        unknown = [r for r in self.rules if r not in catalog]
        if unknown:
            raise ProvwfError(f"ground truth names unknown rules: {', '.join(unknown)}")


def fo(registry: Registry, gt: GroundTruthConfig, scopes: list[tuple[str, str]]) -> float:
    """Final-output success: percent of scopes satisfying the goal predicate."""
    if not scopes:
        raise ProvwfError("no scopes to evaluate; FO undefined")
    predicate = parse_predicate(gt.final_output_where) if gt.final_output_where else None
    satisfied = 0
    for subject, session in scopes:
        hits = registry.lookup(artifact_type=gt.final_output_type, subject=subject, session=session)
        if predicate is not None:
            hits = [a for a in hits if predicate.evaluate(a.attributes) is TRUE]
        if hits:
            satisfied += 1
    return round(float(100 * Fraction(satisfied, len(scopes))), 1)


@dataclass
class MetricReport:
    irm_percent: float | None = None
    pl_count: int | None = None
    fo_percent: float | None = None
    dag_equal: bool | None = None
    failures: list[str] = field(default_factory=list)

    def to_record(self) -> dict[str, Any]:
        return {
            "irm_percent": self.irm_percent,
            "pl_count": self.pl_count,
            "fo_percent": self.fo_percent,
            "dag_equal": self.dag_equal,
            "failures": self.failures,
        }


# -- reproducibility trials -------------------------------------------------------


def scripted_session(
    work_root: Path,
    dataset_root: Path,
    catalog: Catalog,
    dialog_lines: list[str],
) -> tuple[PlanningSession, Registry]:
    """Fresh registry + inspection + scripted dialog; returns the session."""
    registry = Registry(work_root / "artifacts.jsonl")
    inspect_dataset(dataset_root, registry, payload_dir=work_root / "derived")
    session = PlanningSession(registry, catalog)
    replay_dialog(session, dialog_lines)
    return session, registry


def reproducibility_trial(
    cohort: CohortSpec,
    catalog_dir: str | Path,
    dialog_lines: list[str],
    runs: int,
    scratch: str | Path,
) -> tuple[bool, bytes]:
    """Invoke `runs` independent scripted sessions on fresh workspaces and
    compare the canonical DAG bytes pairwise."""
    if runs < 2:
        raise ProvwfError("a reproducibility trial needs at least 2 runs")
    scratch = Path(scratch)
    blobs: list[bytes] = []
    for i in range(runs):
        run_dir = scratch / f"trial{i:02d}"
        if run_dir.exists():
            shutil.rmtree(run_dir)
        run_dir.mkdir(parents=True)
        data_dir = generate_cohort(cohort, run_dir / "data")
        catalog = load_catalog(catalog_dir)
        session, registry = scripted_session(run_dir, data_dir, catalog, dialog_lines)
        if session.draft is None:
            raise Unfinished(
                f"trial run {i}: dialog did not reach a plan "
                f"(outstanding: {[c.question_id for c in session.clarifications]})"
            )
        sealed = session.approve()
        dag = build_dag(sealed, registry, catalog)
        blobs.append(canonicalize_dag(dag))
    equal = all(b == blobs[0] for b in blobs)
    return equal, blobs[0]


def goal_message_from_table(table: dict) -> str:
    """Render a trial's [goal] table as the structured goal message."""
    lines = []
    for key in ("target_type", "where", "subject", "session"):
        if key in table:
            lines.append(f'{key} = "{table[key]}"')
    directives = table.get("directives", {})
    if directives:
        lines.append("[directives]")
        for k, v in sorted(directives.items()):
            rendered = f'"{v}"' if isinstance(v, str) else str(v).lower() if isinstance(v, bool) else v
            lines.append(f'"{k}" = {rendered}')
    return "\n".join(lines)


def run_trial(trial_path: str | Path, scratch: str | Path) -> MetricReport:
    """Execute one trial file end to end and compute its metric report."""
    trial_path = Path(trial_path)
    doc = tomllib.loads(trial_path.read_text(encoding="utf-8"))
    trial = doc.get("trial", {})
    runs = int(trial.get("runs", 2))
    workers = int(trial.get("workers", 1))

    spec = CohortSpec.from_table(doc.get("cohort", {}))
    dialog = []
    if doc.get("goal"):
        dialog.append(goal_message_from_table(doc["goal"]))
    dialog.extend(doc.get("dialog", {}).get("lines", []))
    dialog_file = doc.get("dialog", {}).get("file")
    if dialog_file:
        dialog.extend(read_dialog_file(trial_path.parent / dialog_file))
    gt_table = doc.get("ground_truth", {})
    gt = GroundTruthConfig(
        rules=tuple(gt_table.get("rules", ())),
        final_output_type=gt_table.get("final_output_type", ""),
        final_output_where=gt_table.get("final_output_where", ""),
    ) if gt_table else None

    catalog_dir = trial_path.parent / trial.get("catalog_dir", "rules")
    scratch = Path(scratch)
    scratch.mkdir(parents=True, exist_ok=True)

    report = MetricReport()
    dag_equal, _ = reproducibility_trial(spec, catalog_dir, dialog, runs, scratch / "repro")
    report.dag_equal = dag_equal

    # one full run for PL / IRM / FO
    run_dir = scratch / "metrics"
    if run_dir.exists():
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True)
    data_dir = generate_cohort(spec, run_dir / "data")
    catalog = load_catalog(catalog_dir)
    if gt:
        gt.check(catalog)
    session, registry = scripted_session(run_dir, data_dir, catalog, dialog)
    if session.draft is None:
        raise Unfinished("trial dialog did not reach a plan")
    report.pl_count = count_pl(session.transcript_records())
    if gt:
        first_selection = _first_suggested_rules(session)
        report.irm_percent = irm(first_selection, gt.rules)
    sealed = session.approve()
    dag = build_dag(sealed, registry, catalog)
    paths = RunPaths.create(run_dir, data_dir)
    run_report = execute(dag, MockRunner(), registry, paths, workers=workers)
    if gt:
        report.fo_percent = fo(registry, gt, registry.scopes())
    report.failures.extend(
        f"{key}: {entry.get('diagnostics', 'failed')}"
        for key, entry in run_report.tasks.items()
        if entry["state"] not in ("DONE", "SKIPPED")
    )
    return report


def _first_suggested_rules(session: PlanningSession) -> list[str]:
    """The agent's first selection: rules suggested in its first planning reply."""
    for message in session.transcript:
        if message.role == "agent" and message.kind == "reply":
            break
    # replies carry the rule list in their rendered summary; recompute instead
    from .assembler import _Planner  # provisional planning mirrors the first reply
    goal = session.goal
    if goal is None:
        return []
    bare = goal.__class__(target_type=goal.target_type, where_text=goal.where_text,
                          subject=goal.subject, session=goal.session,
                          dataset_level=goal.dataset_level, directives=())
    planner = _Planner(bare, session.registry, session.catalog, provisional=True)
    return planner.run_provisional()


def read_dialog_file(path: str | Path) -> list[str]:
    lines = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            lines.append(line)
    return lines


# -- ablation: filename-only backend -----------------------------------------------


_ABLATION_EXT_TYPES = {
    ".nii": "nifti_image", ".nii.gz": "nifti_image", ".dcm": "dicom_series",
    ".csv": "table", ".zip": "archive", ".tar": "archive", ".log": "log",
}


class AblationView:
    """Query backend that mimics working from directory listings alone.

    Only payload paths and raw filenames are visible. Filter predicates over
    anything else evaluate UNKNOWN for every file; status is answered by
    filename convention; provenance is simply unavailable.
    """

    def __init__(self, registry: Registry):
        self.entries: list[tuple[str, str]] = []  # (path, filename)
        seen = set()
        for artifact in registry:
            p = artifact.payload_path
            if p and p not in seen:
                seen.add(p)
                self.entries.append((p, p.rsplit("/", 1)[-1]))

    def _class_matches(self, path: str, filename: str, artifact_class: str) -> bool:
        lower = filename.lower()
        for ext, mapped in _ABLATION_EXT_TYPES.items():
            if lower.endswith(ext) and mapped == artifact_class:
                return True
        return artifact_class in filename

    def filter_candidates(self, artifact_class: str) -> list[tuple[str, dict[str, Any]]]:
        return [
            (path, {"path": path, "filename": filename})
            for path, filename in self.entries
            if self._class_matches(path, filename, artifact_class)
        ]

    VISIBLE = frozenset({"path", "filename"})

    def evaluate_predicate(self, pred, attrs):
        """Kleene evaluation where every non-listing attribute is unknowable.

        A directory listing cannot even tell whether a header field was
        present, so EXISTS/MISSING over header attributes are UNKNOWN too.
        """
        from .predicates import And, Comparison, Exists, Missing, Not, Or, TRUE, FALSE, UNKNOWN
        if isinstance(pred, (Comparison, Exists, Missing)):
            if pred.path not in self.VISIBLE:
                return UNKNOWN
            return pred.evaluate(attrs)
        if isinstance(pred, Not):
            inner = self.evaluate_predicate(pred.item, attrs)
            return UNKNOWN if inner is UNKNOWN else not inner
        if isinstance(pred, (And, Or)):
            winner, loser = (FALSE, TRUE) if isinstance(pred, And) else (TRUE, FALSE)
            saw_unknown = False
            for item in pred.items:
                r = self.evaluate_predicate(item, attrs)
                if r is winner:
                    return winner
                if r is UNKNOWN:
                    saw_unknown = True
            return UNKNOWN if saw_unknown else loser
        return UNKNOWN

    def status_map(self, target: str, subject: str | None, session: str | None) -> dict[str, bool]:
        result: dict[str, bool] = {}
        for path, filename in self.entries:
            parts = path.split("/")
            if path.startswith(("store/", "derived/")) or len(parts) < 3:
                scope_key = ""
            else:
                scope_key = f"{parts[0]}/{parts[1]}"
                if subject is not None and parts[0] != subject:
                    continue
                if session is not None and parts[1] != session:
                    continue
            hit = target in filename or self._class_matches(path, filename, target)
            result[scope_key] = result.get(scope_key, False) or hit
        return result

    def resolve_ref(self, ref) -> str:
        raise Unavailable("provenance requires the artifact contract; "
                          "directory listings carry no traceability")

    def trace_up(self, art_id: str):
        raise Unavailable("provenance requires the artifact contract")

    def trace_down(self, art_id: str):
        raise Unavailable("provenance requires the artifact contract")

    def producers(self, art_id: str):
        raise Unavailable("provenance requires the artifact contract")

    def grounding_line(self, consulted: int) -> str:
        return f"directory listing only ({consulted} file(s)); no artifact contract"


def ablation_view(registry: Registry) -> AblationView:
    return AblationView(registry)


# -- the seeded query fixture (filter/counting suite) --------------------------------

# Planned rows: (subject, session, filename, manufacturer, thickness, spacing)
# manufacturer/thickness None -> MISSING in the sidecar. Exactly 23 rows are
# Siemens with thickness > 1.0.
_SIEMENS_THICK = [(f"Q{i:02d}", f"a{1 + i % 2}", 1.1 + (i % 9) * 0.2) for i in range(1, 24)]


def _query_fixture_rows() -> list[dict[str, Any]]:
    rows: list[dict[str, Any]] = []
    for subject, session, thickness in _SIEMENS_THICK:
        rows.append({"manufacturer": "Siemens", "slice_thickness_mm": round(thickness, 2),
                     "subject": subject, "session": session})
    for i in range(10):  # Siemens, thin slices
        rows.append({"manufacturer": "Siemens", "slice_thickness_mm": 0.8,
                     "subject": f"Q{i % 5 + 1:02d}", "session": "b1"})
    for i in range(8):  # Philips, thick
        rows.append({"manufacturer": "Philips", "slice_thickness_mm": 1.5 + (i % 3) * 0.5,
                     "subject": f"Q{i % 4 + 1:02d}", "session": "c1"})
    for i in range(5):  # GE, thick
        rows.append({"manufacturer": "GE", "slice_thickness_mm": 2.0,
                     "subject": f"Q{i + 1:02d}", "session": "d1"})
    for i in range(4):  # manufacturer unknown
        rows.append({"manufacturer": None, "slice_thickness_mm": 1.4,
                     "subject": f"Q{i + 1:02d}", "session": "e1"})
    for i in range(3):  # thickness unknown
        rows.append({"manufacturer": "Siemens", "slice_thickness_mm": None,
                     "subject": f"Q{i + 1:02d}", "session": "f1"})
    for i, row in enumerate(rows):
        row["index"] = i
        row["spacing"] = round(0.6 + (i % 7) * 0.2, 2)
    return rows


def build_query_fixture(root: str | Path) -> Path:
    """A deterministic cohort whose registry answers the flagship filter
    query (Siemens scanner, slice thickness over 1 mm) with exactly 23."""
    root = Path(root)
    for i, row in enumerate(_query_fixture_rows()):
        session_dir = root / row["subject"] / row["session"]
        session_dir.mkdir(parents=True, exist_ok=True)
        name = f"img{i:03d}.nii"
        (session_dir / name).write_bytes(f"fixture-nifti-{i:03d}".encode())
        meta = {
            "type": "nifti_image",
            "modality": "MR",
            "manufacturer": row["manufacturer"],
            "slice_thickness_mm": row["slice_thickness_mm"],
            "voxel_spacing_mm": row["spacing"],
        }
        (session_dir / (name + ".meta.json")).write_text(
            json.dumps(meta, sort_keys=True), encoding="utf-8")
    # a handful of CT series so type filtering has contrast
    for i in range(6):
        session_dir = root / f"Q{i % 3 + 1:02d}" / "ct1"
        session_dir.mkdir(parents=True, exist_ok=True)
        name = f"scan{i:02d}.dcm"
        (session_dir / name).write_bytes(f"fixture-dicom-{i:02d}".encode())
        meta = {"type": "dicom_series", "modality": "CT", "manufacturer": "Siemens",
                "slice_thickness_mm": 3.0, "voxel_spacing_mm": 1.0}
        (session_dir / (name + ".meta.json")).write_text(
            json.dumps(meta, sort_keys=True), encoding="utf-8")
    return root


TABLE_FILTER_QUERY = 'COUNT nifti_image WHERE manufacturer = "Siemens" AND slice_thickness_mm > 1.0'
TABLE_FILTER_EXPECTED = 23

# Twenty filter/counting queries over header-only attributes; every one is
# unanswerable from filenames alone.
FILTER_SUITE: list[str] = [
    TABLE_FILTER_QUERY,
    'COUNT nifti_image WHERE manufacturer = "Siemens"',
    'COUNT nifti_image WHERE manufacturer = "Philips"',
    'COUNT nifti_image WHERE manufacturer = "GE"',
    'COUNT nifti_image WHERE slice_thickness_mm > 1.0',
    'COUNT nifti_image WHERE slice_thickness_mm <= 1.0',
    'COUNT nifti_image WHERE slice_thickness_mm > 1.5',
    'COUNT nifti_image WHERE voxel_spacing_mm < 1.0',
    'COUNT nifti_image WHERE voxel_spacing_mm >= 1.0',
    'COUNT nifti_image WHERE modality = "MR"',
    'COUNT nifti_image WHERE MISSING manufacturer',
    'COUNT nifti_image WHERE MISSING slice_thickness_mm',
    'COUNT nifti_image WHERE EXISTS manufacturer AND EXISTS slice_thickness_mm',
    'COUNT nifti_image WHERE manufacturer != "Siemens"',
    'COUNT nifti_image WHERE manufacturer = "Siemens" AND slice_thickness_mm <= 1.0',
    'COUNT nifti_image WHERE manufacturer = "Philips" OR manufacturer = "GE"',
    'COUNT nifti_image WHERE manufacturer CONTAINS "ie"',
    'COUNT nifti_image WHERE slice_thickness_mm > 1.0 AND voxel_spacing_mm < 1.5',
    'COUNT dicom_series WHERE modality = "CT"',
    'COUNT dicom_series WHERE slice_thickness_mm >= 2.0',
]
