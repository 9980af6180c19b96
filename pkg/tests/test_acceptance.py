"""Acceptance suite: one test per exit criterion, one printed line each.

Run with `pytest tests/test_acceptance.py -s` to see the PASS lines as they
stream; each test prints only after every assertion in it has held.
"""

from __future__ import annotations

import json
import time
from pathlib import Path
from random import Random

import pytest
import requests

from provwf import query
from provwf.assembler import Goal, approve, assemble
from provwf.contract import Registry
from provwf.errors import ApprovalError, IoError, Unavailable
from provwf.executor import (
    MockRunner,
    RunPaths,
    build_dag,
    execute,
    task_fingerprint,
)
from provwf.harness import (
    FILTER_SUITE,
    TABLE_FILTER_EXPECTED,
    TABLE_FILTER_QUERY,
    CohortSpec,
    GroundTruthConfig,
    ablation_view,
    build_query_fixture,
    fo,
    generate_cohort,
    irm,
    reproducibility_trial,
)
from provwf.inspector import inspect_dataset
from provwf.rules import load_catalog
from provwf.session import count_pl

from conftest import TOY_RULES, _chain_rule, make_root_artifact, write_catalog
from oracles import (
    brute_force_filter,
    descendants,
    minimal_satisfying_sets,
    random_attributes,
    random_predicate,
)


def ok(line: str) -> None:
    print(f"ACCEPTANCE PASS: {line}")


# -- 1. DAG reproducibility ---------------------------------------------------------


COHORTS = {
    "plain_mid": CohortSpec(subjects=2, sessions_min=1, sessions_max=2, seed=101),
    "kernels_high": CohortSpec(subjects=3, sessions_min=1, sessions_max=2, seed=202,
                               duplicate_kernel_prob=1.0,
                               manufacturers=("Siemens", "Philips", "GE")),
    "corrupt_mid": CohortSpec(subjects=2, sessions_min=2, sessions_max=2, seed=303,
                              corrupt_sidecar_prob=0.5),
}
GOALS = {
    "convert": ['target_type = "nifti_image"'],
    "qa": ['target_type = "qa_report"'],
    "seg": ['target_type = "seg_mask"'],
}


def test_dag_reproducibility_nine_settings_ten_sessions(tmp_path):
    started = time.monotonic()
    catalog_dir = write_catalog(tmp_path / "rules", TOY_RULES)
    blobs = {}
    for cohort_name, spec in COHORTS.items():
        for goal_name, dialog in GOALS.items():
            lines = list(dialog)
            if cohort_name == "kernels_high":
                lines.append("fanout.convert.series=all")
            equal, blob = reproducibility_trial(
                spec, catalog_dir, lines, runs=10,
                scratch=tmp_path / f"{cohort_name}_{goal_name}")
            assert equal, f"{cohort_name}/{goal_name}: DAGs diverged across sessions"
            blobs[(cohort_name, goal_name)] = blob
    assert len(blobs) == 9
    assert len(set(blobs.values())) == 9  # settings are genuinely distinct
    elapsed = time.monotonic() - started
    assert elapsed < 120, f"took {elapsed:.1f}s, budget is 2 minutes"
    ok(f"DAG reproducibility: 9 settings x 10 sessions byte-identical "
       f"({elapsed:.1f}s)")


# -- 2. incremental execution ----------------------------------------------------------


def _random_pipeline(rng: Random, tmp_path: Path, case: int):
    """Random single-producer catalog + tiny cohort, ready to execute."""
    n_rules = rng.randint(3, 7)
    types = ["raw_series"] + [f"t{case}_{i}" for i in range(n_rules)]
    rules = {}
    for i in range(n_rules):
        pool = types[: i + 1]
        ins = sorted(rng.sample(pool, min(len(pool), rng.randint(1, 2))))
        rules[f"r{case}_{i}"] = (ins, [types[i + 1]])
    catalog_dir = write_catalog(
        tmp_path / "rules",
        {rid: _chain_rule(rid, ins, outs) for rid, (ins, outs) in rules.items()})
    catalog = load_catalog(catalog_dir)

    data = tmp_path / "data"
    scopes = [("S01", "A")] if rng.random() < 0.5 else [("S01", "A"), ("S02", "A")]
    for subject, session in scopes:
        d = data / subject / session
        d.mkdir(parents=True)
        (d / "series01.dcm").write_bytes(f"{case}:{subject}".encode())
        (d / "series01.dcm.meta.json").write_text(
            json.dumps({"type": "raw_series", "modality": "CT"}))
    registry = Registry()
    inspect_dataset(data, registry)
    sealed = approve(assemble(Goal(target_type=types[-1]), registry, catalog).config)
    paths = RunPaths.create(tmp_path / "work", data)
    return registry, catalog, sealed, paths, data, scopes


def test_incremental_execution_matches_reachability_oracle(tmp_path):
    rng = Random(2024)
    second_run_checked = 0
    for case in range(100):
        case_dir = tmp_path / f"case{case:03d}"
        registry, catalog, sealed, paths, data, scopes = _random_pipeline(
            rng, case_dir, case)
        dag = build_dag(sealed, registry, catalog)
        execute(dag, MockRunner(), registry, paths)

        # unchanged state: zero tasks run
        repeat = execute(build_dag(sealed, registry, catalog), MockRunner(),
                         registry, paths)
        assert repeat.executed == 0 and repeat.skipped == len(dag.nodes)
        second_run_checked += 1

        # mutate one input file, re-inspect, re-run
        subject, session = rng.choice(scopes)
        victim = data / subject / session / "series01.dcm"
        victim.write_bytes(victim.read_bytes() + f"-mut{case}".encode())
        inspect_dataset(data, registry)
        dag2 = build_dag(sealed, registry, catalog)
        report = execute(dag2, MockRunner(), registry, paths)
        ran = {k for k, e in report.tasks.items() if e["state"] == "DONE"}
        mutated_root = registry.current("raw_series", subject, session,
                                        f"{subject}/{session}/series01.dcm")
        direct = {
            k for k, n in dag2.nodes.items()
            if any(ref == ("artifact", mutated_root.id) for _, ref in n.inputs)
        }
        expected = direct | descendants([(p, c) for p, c, _ in dag2.edges], direct)
        assert ran == expected, f"case {case}: {ran} != {expected}"
    assert second_run_checked == 100
    ok("incremental execution: 100 random DAGs, re-run set == reachability closure")


# -- 3. schedule independence ------------------------------------------------------------


def test_schedule_independence_across_worker_counts(tmp_path):
    observed = []
    for workers in (1, 2, 4, 8):
        case = tmp_path / f"w{workers}"
        data = generate_cohort(CohortSpec(subjects=3, sessions_min=1, sessions_max=2,
                                          seed=77), case / "data")
        registry = Registry()
        inspect_dataset(data, registry)
        catalog = load_catalog(write_catalog(case / "rules", TOY_RULES))
        sealed = approve(assemble(Goal(target_type="seg_mask"), registry,
                                  catalog).config)
        execute(build_dag(sealed, registry, catalog), MockRunner(), registry,
                RunPaths.create(case / "work", data), workers=workers)
        ids = frozenset(a.id for a in registry)
        fps = frozenset(
            task_fingerprint(
                a.provenance.rule_fingerprint, a.provenance.rule_id,
                dict(a.provenance.param_binding),
                [registry.get(i).content_hash for i in a.provenance.input_ids])
            for a in registry if a.provenance.kind == "DERIVED")
        observed.append((ids, fps))
    assert len(set(observed)) == 1
    ok("schedule independence: workers {1,2,4,8} give identical id and "
       "fingerprint sets")


# -- 4. query oracle equivalence ------------------------------------------------------------


def test_query_oracle_equivalence_ten_thousand_pairs(tmp_path):
    rng = Random(31337)
    pairs = 0
    for round_no in range(100):
        registry = Registry()
        artifacts = []
        for i in range(rng.randint(8, 30)):
            art = make_root_artifact("thing", f"a{round_no}_{i}", f"S{i % 5}", "A",
                                     random_attributes(rng))
            registry.register(art)
            artifacts.append(registry.get(art.id))
        for _ in range(100):
            pred = random_predicate(rng, depth=rng.randint(1, 5))
            expected_ids, expected_unknown = brute_force_filter(artifacts, pred)
            got = query.evaluate(query.FilterQuery("LIST", "thing", pred), registry)
            assert got.answer == expected_ids
            assert got.unknown_count == expected_unknown
            pairs += 1
    assert pairs == 10000

    work = tmp_path / "fixture"
    registry = Registry()
    inspect_dataset(build_query_fixture(work / "data"), registry,
                    payload_dir=work / "derived")
    result = query.run(TABLE_FILTER_QUERY, registry)
    assert result.answer == TABLE_FILTER_EXPECTED == 23
    assert "data_inventory.csv" in result.grounding
    ok("query oracle equivalence: 10000/10000 exact; seeded fixture answers 23")


# -- 5. ablation direction ---------------------------------------------------------------


def test_ablation_contract_20_of_20_filenames_0_of_20(tmp_path):
    registry = Registry()
    inspect_dataset(build_query_fixture(tmp_path / "data"), registry,
                    payload_dir=tmp_path / "derived")
    nifti = registry.lookup(artifact_type="nifti_image")
    dicom = registry.lookup(artifact_type="dicom_series")

    contract_correct = 0
    for dsl in FILTER_SUITE:
        parsed = query.parse(dsl)
        pool = nifti if parsed.artifact_class == "nifti_image" else dicom
        expected_ids, _ = brute_force_filter(pool, parsed.predicate)
        result = query.evaluate(parsed, registry)
        if result.answer == len(expected_ids) and result.answer > 0:
            contract_correct += 1
    assert contract_correct == 20

    view = ablation_view(registry)
    filename_answerable = 0
    for dsl in FILTER_SUITE:
        result = query.evaluate(query.parse(dsl), view)
        if result.answer != 0 or result.unknown_count == 0:
            filename_answerable += 1
    assert filename_answerable == 0

    some_id = nifti[0].id
    with pytest.raises(Unavailable):
        query.evaluate(query.parse(f'TRACE "{some_id}"'), view)
    ok("ablation direction: contract 20/20, filename-only 0/20 (all UNKNOWN), "
       "provenance Unavailable")


# -- 6. metric arithmetic ---------------------------------------------------------------------


def test_metric_arithmetic_matches_published_values():
    gt14 = [f"r{i}" for i in range(14)]
    gt17 = [f"r{i}" for i in range(17)]
    assert irm(gt14[:12], gt14) == 85.7
    assert irm(gt17[:15], gt17) == 88.2
    assert irm(gt17[:16], gt17) == 94.1

    transcript = [
        {"role": "user", "text": "goal", "kind": "goal"},
        {"role": "agent", "text": "needs confirmation", "kind": "reply",
         "plan_ready": False},
        {"role": "user", "text": "STATUS seg_mask", "kind": "query"},
        {"role": "agent", "text": "answer", "kind": "reply", "plan_ready": False},
        {"role": "user", "text": "all", "kind": "clarification_answer"},
        {"role": "agent", "text": "plan", "kind": "reply", "plan_ready": True},
    ]
    assert count_pl(transcript) == 2  # hand count: goal + answer, query excluded
    single_shot = [
        {"role": "user", "text": "goal", "kind": "goal"},
        {"role": "agent", "text": "plan", "kind": "reply", "plan_ready": True},
    ]
    assert count_pl(single_shot) == 1

    registry = Registry()
    scopes = [(f"S{i:02d}", "A") for i in range(10)]
    gt = GroundTruthConfig(rules=("seg",), final_output_type="seg_mask")
    for subject, session in scopes[:7]:  # plant 3 known failures out of 10
        registry.register(make_root_artifact("seg_mask", "m", subject, session))
    assert fo(registry, gt, scopes) == 70.0
    ok("metric arithmetic: IRM 85.7/88.2/94.1, PL hand counts, FO planted "
       "failures exact")


# -- 7. assembler minimality and no-silent-choice ----------------------------------------------


def test_assembler_minimality_and_no_silent_choice(tmp_path):
    rng = Random(4096)
    minimal_cases = 0
    for case in range(40):
        n = rng.randint(2, 8)
        types = [f"t{i}" for i in range(n + 1)]
        rules = {}
        for i in range(n):
            pool = types[: i + 1]
            ins = sorted(rng.sample(pool, min(len(pool), rng.randint(1, 3))))
            rules[f"r{i}"] = (ins, [types[i + 1]])
        catalog = load_catalog(write_catalog(
            tmp_path / f"min{case}",
            {rid: _chain_rule(rid, ins, outs) for rid, (ins, outs) in rules.items()}))
        registry = Registry()
        registry.register(make_root_artifact("t0", "root", "S01", "A"))
        result = assemble(Goal(target_type=types[-1]), registry, catalog)
        planned = frozenset(result.config.rule_ids())
        minimal = minimal_satisfying_sets(rules, {"t0"}, types[-1])
        assert planned in minimal and len(minimal) == 1
        minimal_cases += 1
    assert minimal_cases == 40

    clarified = 0
    for case in range(10):
        depth = rng.randint(1, 3)
        texts, prev = {}, "t0"
        for i in range(depth):
            texts[f"step{i}"] = _chain_rule(f"step{i}", [prev], [f"t{i + 1}"])
            prev = f"t{i + 1}"
        texts["make_a"] = _chain_rule("make_a", [prev], ["goal_t"])
        texts["make_b"] = _chain_rule("make_b", [prev], ["goal_t"])
        catalog = load_catalog(write_catalog(tmp_path / f"dual{case}", texts))
        registry = Registry()
        registry.register(make_root_artifact("t0", "root", "S01", "A"))
        result = assemble(Goal(target_type="goal_t"), registry, catalog)
        assert result.needs_clarification
        assert result.clarifications[0].options == ("make_a", "make_b")
        clarified += 1
    assert clarified == 10
    ok("assembler minimality: 40/40 equal exhaustive-search minimum; "
       "dual producers clarified 10/10")


# -- 8. approval gate and locality --------------------------------------------------------------


def test_approval_gate_and_loopback_locality(tmp_path):
    import threading

    from provwf.service import make_server
    from provwf.workspace import Workspace

    data = generate_cohort(CohortSpec(subjects=1, seed=5), tmp_path / "data")
    catalog_dir = write_catalog(tmp_path / "rules", TOY_RULES)

    # direct API: no execution path accepts an unapproved configuration
    registry = Registry()
    inspect_dataset(data, registry)
    catalog = load_catalog(catalog_dir)
    draft = assemble(Goal(target_type="seg_mask"), registry, catalog).config
    paths = RunPaths.create(tmp_path / "work", data)
    with pytest.raises(ApprovalError):
        build_dag(draft, registry, catalog)
    with pytest.raises(ApprovalError):
        execute(build_dag(draft, registry, catalog, require_approved=False),
                MockRunner(), registry, paths)

    # service: endpoint-order negative tests plus loopback-only binding
    ws = Workspace(tmp_path / ".provwf", dataset_root=data, catalog_dir=catalog_dir)
    inspect_dataset(data, ws.registry, payload_dir=ws.derived_dir)
    with pytest.raises(IoError):
        make_server(ws, bind="0.0.0.0", port=0)
    server = make_server(ws, bind="127.0.0.1", port=0)
    assert server.server_address[0] == "127.0.0.1"
    threading.Thread(target=server.serve_forever, daemon=True).start()
    base = f"http://127.0.0.1:{server.server_address[1]}/v1"
    try:
        # run with no plan at all
        assert requests.post(f"{base}/runs", json={"plan_id": "nope"}).status_code == 404
        # run with a draft plan saved but never approved
        sid = requests.post(f"{base}/sessions", json={}).json()["session_id"]
        requests.post(f"{base}/sessions/{sid}/message",
                      json={"text": 'target_type = "seg_mask"'})
        draft_id = ws.save_plan(server.provwf_state.sessions[sid].draft)
        resp = requests.post(f"{base}/runs", json={"plan_id": draft_id})
        assert resp.status_code == 409
        assert resp.json()["error"]["code"] == "approval_required"
        # approve-then-run succeeds, proving the gate was the only blocker
        plan_id = requests.post(f"{base}/sessions/{sid}/approve", json={}).json()["plan_id"]
        run_id = requests.post(f"{base}/runs", json={"plan_id": plan_id,
                                                     "runner": "mock"}).json()["run_id"]
        for _ in range(100):
            state = requests.get(f"{base}/runs/{run_id}").json()["state"]
            if state != "RUNNING":
                break
            time.sleep(0.05)
        assert state == "DONE"
    finally:
        server.shutdown()
        server.server_close()
    ok("approval gate unreachable without APPROVED config; default bind is "
       "loopback-only")
