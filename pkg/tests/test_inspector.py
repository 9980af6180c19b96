"""Dataset inspection: scanning, sidecar extraction, inventory, summary."""

from __future__ import annotations

import json

import pytest

from provwf.contract import Registry
from provwf.errors import IoError
from provwf.harness import CohortSpec, generate_cohort
from provwf.inspector import (
    CORRUPT,
    OK,
    PARTIAL,
    ScopeMapping,
    build_inventory,
    extract_metadata,
    inspect_dataset,
    inventory_csv_bytes,
    scan,
    summarize,
)
from provwf.values import MISSING

from conftest import write_session_file


def test_scan_empty_root(tmp_path):
    (tmp_path / "data").mkdir()
    assert scan(tmp_path / "data") == []


def test_scan_missing_root(tmp_path):
    with pytest.raises(IoError):
        scan(tmp_path / "nope")


def test_scan_assigns_scopes_and_sorts(tmp_path):
    root = tmp_path / "data"
    # create in a deliberately scrambled order
    write_session_file(root, "S02", "b", "z.dcm", b"z", {"modality": "CT"})
    write_session_file(root, "S01", "a", "m.dcm", b"m", {"modality": "CT"})
    (root / "top.csv").write_bytes(b"c1\n")
    records = scan(root)
    assert [r.path for r in records] == ["S01/a/m.dcm", "S02/b/z.dcm", "top.csv"]
    assert records[0].subject == "S01" and records[0].session == "a"
    assert records[2].subject == "" and records[2].session == ""


def test_scan_is_deterministic_under_creation_order(tmp_path):
    names = [("S03", "x", "f1.nii"), ("S01", "y", "f2.nii"), ("S02", "z", "f3.nii")]
    r1 = tmp_path / "one"
    for subject, session, name in names:
        write_session_file(r1, subject, session, name, b"c", {"modality": "MR"})
    r2 = tmp_path / "two"
    for subject, session, name in reversed(names):
        write_session_file(r2, subject, session, name, b"c", {"modality": "MR"})
    assert [(r.path, r.content_hash) for r in scan(r1)] == \
           [(r.path, r.content_hash) for r in scan(r2)]


def test_scope_mapping_variants():
    flat = ScopeMapping("{subject}")
    assert flat.scope_of("S01/file.dcm") == ("S01", "")
    assert flat.scope_of("file.dcm") == ("", "")
    nested = ScopeMapping()
    assert nested.scope_of("S01/ses2/deep/file.dcm") == ("S01", "ses2")
    with pytest.raises(ValueError):
        ScopeMapping("{subject}/{visit}")


def test_extract_ok_partial_corrupt(tmp_path):
    ok = tmp_path / "a.nii"
    ok.write_bytes(b"img")
    (tmp_path / "a.nii.meta.json").write_text(
        json.dumps({"modality": "MR", "manufacturer": "GE", "gap": None}))
    attrs, status = extract_metadata(ok)
    assert status == OK
    assert attrs["modality"] == "MR" and attrs["gap"] is MISSING

    bare = tmp_path / "b.nii"
    bare.write_bytes(b"img")
    attrs, status = extract_metadata(bare)
    assert status == PARTIAL
    assert attrs == {"format": "nii"}

    trunc = tmp_path / "c.nii"
    trunc.write_bytes(b"img")
    full = json.dumps({"modality": "MR", "manufacturer": "Siemens", "slice_thickness_mm": 1.5})
    (tmp_path / "c.nii.meta.json").write_text(full[: len(full) * 2 // 3])
    attrs, status = extract_metadata(trunc)
    assert status == CORRUPT
    assert attrs.get("modality") == "MR"  # recoverable prefix keys kept


def test_truncation_salvage_agrees_with_reference_parser(tmp_path):
    """Fuzzed truncations: whatever the salvager keeps must equal the full value."""
    doc = {"modality": "CT", "manufacturer": "Philips", "slice_thickness_mm": 2.25,
           "ok": True, "count": 12}
    full = json.dumps(doc, sort_keys=True)
    f = tmp_path / "x.dcm"
    f.write_bytes(b"img")
    for cut in range(8, len(full)):
        (tmp_path / "x.dcm.meta.json").write_text(full[:cut])
        attrs, status = extract_metadata(f)
        for key, value in attrs.items():
            if key in doc:
                assert value == doc[key], (cut, key)
        if status == OK:
            assert cut == len(full)


def test_nested_sidecar_maps_flatten_to_dotted_paths(tmp_path):
    f = tmp_path / "a.nii"
    f.write_bytes(b"img")
    (tmp_path / "a.nii.meta.json").write_text(json.dumps(
        {"modality": "MR", "acquisition": {"plane": "axial", "echo": {"time_ms": 3.1}}}))
    attrs, status = extract_metadata(f)
    assert status == OK
    assert attrs["acquisition.plane"] == "axial"
    assert attrs["acquisition.echo.time_ms"] == 3.1

    (tmp_path / "a.nii.meta.json").write_text(json.dumps({"tags": ["x", "y"]}))
    attrs, status = extract_metadata(f)
    assert status == CORRUPT  # lists stay out of the flat value space


def test_sidecars_are_not_inventoried(tmp_path):
    root = tmp_path / "data"
    write_session_file(root, "S01", "a", "img.nii", b"x", {"modality": "MR"})
    records = scan(root)
    assert [r.path for r in records] == ["S01/a/img.nii"]


def test_build_inventory_counts_and_idempotence(tmp_path):
    root = tmp_path / "data"
    for i in range(10):
        write_session_file(root, f"S{i % 2}", "a", f"f{i}.dcm", str(i).encode(),
                           {"modality": "CT", "manufacturer": "Siemens"})
    registry = Registry()
    records = scan(root)
    ids, inventory = build_inventory(registry, records, payload_dir=tmp_path / "derived")
    assert len(ids) == 10
    assert len(registry) == 11  # 10 ROOT + inventory
    csv_text = (tmp_path / "derived" / "data_inventory.csv").read_text()
    lines = csv_text.splitlines()
    assert len(lines) == 11
    assert lines[0] == ("path,subject,session,type,modality,manufacturer,"
                        "slice_thickness_mm,voxel_spacing_mm,status,content_hash")

    before = len(registry)
    build_inventory(registry, scan(root), payload_dir=tmp_path / "derived")
    assert len(registry) == before  # unchanged tree adds nothing


def test_empty_inventory_artifact(tmp_path):
    (tmp_path / "data").mkdir()
    registry = Registry()
    ids, inventory = build_inventory(registry, [], payload_dir=tmp_path / "derived")
    assert ids == []
    assert inventory.attributes["row_count"] == 0
    assert inventory_csv_bytes([]).decode().count("\n") == 1


def test_summary_counts_equal_registry_scans(tmp_path):
    root = tmp_path / "data"
    write_session_file(root, "S01", "a", "x.dcm", b"1",
                       {"modality": "CT", "manufacturer": "Siemens"})
    write_session_file(root, "S01", "b", "y.dcm", b"2",
                       {"modality": "CT", "manufacturer": "Philips"})
    write_session_file(root, "S02", "a", "z.nii", b"3", {"modality": "MR"})
    registry = Registry()
    summary = inspect_dataset(root, registry)
    assert summary.file_count == 3
    assert summary.subject_count == 2
    assert summary.session_count == 3
    assert summary.modality_counts == {"CT": 2, "MR": 1}
    assert summary.manufacturers == ["Philips", "Siemens"]
    assert summary.organization == "subject-session-nested"
    assert summary.prior_processing == []
    # grounding: the registered summary artifact carries the same numbers
    art = registry.lookup(artifact_type="inspection_summary")[0]
    assert art.attributes["counts.modality.CT"] == 2


def test_prior_processing_flags_derived_types(tmp_path):
    root = tmp_path / "data"
    write_session_file(root, "S01", "a", "x.dcm", b"1", {"modality": "CT"})
    registry = Registry()
    inspect_dataset(root, registry)
    from provwf.contract import Artifact, ProvenanceRecord
    base = registry.lookup(artifact_type="dicom_series")[0]
    registry.register(Artifact(
        artifact_type="seg_mask", logical_name="seg.mask", subject="S01", session="a",
        provenance=ProvenanceRecord(kind="DERIVED", rule_id="seg", rule_fingerprint="f" * 64,
                                    input_ids=(base.id,)),
        content_hash="9" * 64))
    summary = summarize(registry)
    assert "seg_mask" in summary.prior_processing


def test_corrupt_sidecars_counted_not_fatal(tmp_path):
    spec = CohortSpec(subjects=4, sessions_min=2, sessions_max=2,
                      corrupt_sidecar_prob=1.0, seed=5)
    root = generate_cohort(spec, tmp_path / "data")
    registry = Registry()
    summary = inspect_dataset(root, registry)
    assert summary.status_counts.get(CORRUPT, 0) == summary.file_count
    assert summary.file_count == 8


def test_archives_listed_as_opaque_files(tmp_path):
    spec = CohortSpec(subjects=2, sessions_min=1, sessions_max=1,
                      nested_archive_prob=1.0, seed=2)
    root = generate_cohort(spec, tmp_path / "data")
    records = scan(root)
    archives = [r for r in records if r.artifact_type == "archive"]
    assert len(archives) == 2
    assert all(r.status == PARTIAL for r in archives)  # no sidecar, ext only


def test_research_scale_cohort_200_subjects_592_sessions(tmp_path):
    spec = CohortSpec(subjects=200, sessions_min=2, sessions_max=4,
                      total_sessions=592, seed=42)
    root = generate_cohort(spec, tmp_path / "data")
    records = scan(root)
    scopes = {(r.subject, r.session) for r in records}
    assert len(scopes) == 592
    assert len({s for s, _ in scopes}) == 200
