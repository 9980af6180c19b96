from __future__ import annotations

import json
from pathlib import Path

import pytest

from provwf.contract import Artifact, ProvenanceRecord, Registry
from provwf.rules import load_catalog

# ---------------------------------------------------------------------------
# rule catalogs
# ---------------------------------------------------------------------------

TOY_RULES = {
    "convert": """
[rule]
id = "convert"
version = "1"
action = "true"
emits = ["voxel_spacing_mm"]

[[input]]
name = "series"
type = "raw_series"

[[output]]
name = "image"
type = "nifti_image"
attributes = { modality = "CT" }

[[output]]
name = "log"
type = "convert_log"

[params.target_spacing]
type = "float"
default = 1.0
min = 0.1
max = 5.0
""",
    "qa": """
[rule]
id = "qa"
version = "1"
action = "true"
emits = ["qa_passed"]

[[input]]
name = "image"
type = "nifti_image"

[[input]]
name = "log"
type = "convert_log"

[[output]]
name = "report"
type = "qa_report"
""",
    "seg": """
[rule]
id = "seg"
version = "1"
action = "true"

[[input]]
name = "image"
type = "nifti_image"

[[input]]
name = "report"
type = "qa_report"

[[output]]
name = "mask"
type = "seg_mask"

[params.model]
type = "text"
default = "unet1"
""",
}

DUAL_PRODUCER_EXTRA = """
[rule]
id = "seg_alt"
version = "1"
action = "true"

[[input]]
name = "image"
type = "nifti_image"

[[output]]
name = "mask"
type = "seg_mask"

[params.model]
type = "text"
default = "unet2"
"""

CYCLIC_RULES = {
    "ping": """
[rule]
id = "ping"
version = "1"

[[input]]
name = "b"
type = "type_b"

[[output]]
name = "a"
type = "type_a"
""",
    "pong": """
[rule]
id = "pong"
version = "1"

[[input]]
name = "a"
type = "type_a"

[[output]]
name = "b"
type = "type_b"
""",
}


def _chain_rule(rule_id: str, inputs: list[str], outputs: list[str],
                emits: list[str] | None = None) -> str:
    parts = [f'[rule]\nid = "{rule_id}"\nversion = "1"\naction = "true"']
    if emits:
        rendered = ", ".join(f'"{e}"' for e in emits)
        parts[0] += f"\nemits = [{rendered}]"
    for i, t in enumerate(inputs):
        parts.append(f'[[input]]\nname = "in{i}"\ntype = "{t}"')
    for i, t in enumerate(outputs):
        parts.append(f'[[output]]\nname = "out{i}"\ntype = "{t}"')
    return "\n\n".join(parts) + "\n"


# 14 rules at lung-pipeline scale; the dependency closure for goal
# "volume_table" selects exactly 12 of them (mask_qa and thumbnails are
# expert additions never forced by dependencies).
LUNG14_CHAIN = [
    ("unpack_archive", ["archive"], ["raw_series"]),
    ("sort_series", ["raw_series"], ["sorted_series"]),
    ("convert_nifti", ["sorted_series"], ["nifti_image"]),
    ("validate_header", ["nifti_image"], ["header_report"]),
    ("resample_iso", ["nifti_image"], ["resampled_image"]),
    ("intensity_norm", ["resampled_image"], ["normalized_image"]),
    ("body_crop", ["normalized_image"], ["cropped_image"]),
    ("qa_screen", ["cropped_image", "header_report"], ["qa_report"]),
    ("lung_mask_rule", ["cropped_image"], ["lung_mask"]),
    ("airway_mask_rule", ["cropped_image"], ["airway_mask"]),
    ("lobe_split", ["lung_mask", "airway_mask", "cropped_image", "qa_report"], ["lobe_mask"]),
    ("measure_volumes", ["lobe_mask"], ["volume_table"]),
    ("mask_qa", ["lobe_mask"], ["mask_qa_report"]),
    ("thumbnails", ["cropped_image"], ["thumbnail_sheet"]),
]
LUNG14_GOAL_RULES = [r for r, _, _ in LUNG14_CHAIN if r not in ("mask_qa", "thumbnails")]


def write_catalog(directory: Path, rules: dict[str, str]) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for rule_id, text in rules.items():
        (directory / f"{rule_id}.rule.toml").write_text(text, encoding="utf-8")
    return directory


@pytest.fixture(scope="session")
def toy_catalog_dir(tmp_path_factory) -> Path:
    return write_catalog(tmp_path_factory.mktemp("toy_rules"), TOY_RULES)


@pytest.fixture()
def toy_catalog(toy_catalog_dir):
    return load_catalog(toy_catalog_dir)


@pytest.fixture(scope="session")
def dual_catalog_dir(tmp_path_factory) -> Path:
    rules = dict(TOY_RULES)
    rules["seg_alt"] = DUAL_PRODUCER_EXTRA
    return write_catalog(tmp_path_factory.mktemp("dual_rules"), rules)


@pytest.fixture(scope="session")
def cyclic_catalog_dir(tmp_path_factory) -> Path:
    return write_catalog(tmp_path_factory.mktemp("cyclic_rules"), CYCLIC_RULES)


@pytest.fixture(scope="session")
def lung14_catalog_dir(tmp_path_factory) -> Path:
    rules = {rid: _chain_rule(rid, ins, outs) for rid, ins, outs in LUNG14_CHAIN}
    return write_catalog(tmp_path_factory.mktemp("lung14_rules"), rules)


# ---------------------------------------------------------------------------
# cohorts and registries
# ---------------------------------------------------------------------------


def write_session_file(root: Path, subject: str, session: str, name: str,
                       content: bytes, meta: dict | None = None) -> Path:
    session_dir = root / subject / session
    session_dir.mkdir(parents=True, exist_ok=True)
    path = session_dir / name
    path.write_bytes(content)
    if meta is not None:
        (session_dir / (name + ".meta.json")).write_text(
            json.dumps(meta, sort_keys=True), encoding="utf-8")
    return path


def make_raw_cohort(root: Path, scopes: list[tuple[str, str]],
                    modality: str = "CT") -> Path:
    """One raw_series file (with sidecar) per scope."""
    for subject, session in scopes:
        write_session_file(
            root, subject, session, "series01.dcm",
            f"{subject}/{session}/raw".encode(),
            {"type": "raw_series", "modality": modality, "manufacturer": "Siemens",
             "slice_thickness_mm": 1.5, "voxel_spacing_mm": 1.0},
        )
    return root


def make_root_artifact(artifact_type: str, name: str, subject: str = "",
                       session: str = "", attributes: dict | None = None,
                       content: str = "x") -> Artifact:
    import hashlib
    return Artifact(
        artifact_type=artifact_type,
        logical_name=name,
        subject=subject,
        session=session,
        attributes=attributes or {},
        provenance=ProvenanceRecord(kind="ROOT"),
        content_hash=hashlib.sha256(content.encode()).hexdigest(),
        payload_path=name,
    )


@pytest.fixture()
def registry() -> Registry:
    return Registry()
