"""Backward-chaining assembly: plans, clarifications, approval sealing."""

from __future__ import annotations

import dataclasses
import json
from random import Random

import pytest

from provwf.assembler import (
    APPROVED,
    Clarification,
    Configuration,
    Goal,
    approve,
    assemble,
    check_feasibility,
    interpret_goal,
    keyword_goal,
    parse_goal_toml,
    render_plan,
)
from provwf.contract import Registry
from provwf.errors import ApprovalError, CyclicCatalogError, InfeasibleGoal
from provwf.inspector import inspect_dataset
from provwf.rules import load_catalog

from conftest import (
    LUNG14_GOAL_RULES,
    _chain_rule,
    make_raw_cohort,
    make_root_artifact,
    write_catalog,
    write_session_file,
)
from oracles import minimal_satisfying_sets

TWO_SCOPES = [("S01", "A"), ("S02", "A")]


def seeded_registry(tmp_path, scopes=None, catalog_dir=None) -> Registry:
    root = make_raw_cohort(tmp_path / "data", scopes or TWO_SCOPES)
    registry = Registry()
    inspect_dataset(root, registry)
    return registry


def test_toy_chain_selects_convert_qa_seg(tmp_path, toy_catalog):
    registry = seeded_registry(tmp_path)
    result = assemble(Goal(target_type="seg_mask"), registry, toy_catalog)
    assert not result.needs_clarification
    config = result.config
    assert config.rule_ids() == ["convert", "qa", "seg"]
    # per-scope expansion: three tasks per scope
    assert len(config.instances) == 6
    # oracle: exhaustive search over rule subsets finds the same minimal set
    rules = {
        rid: ([s.required_type for s in spec.inputs],
              [o.produced_type for o in spec.outputs])
        for rid, spec in toy_catalog.rules.items()
    }
    minimal = minimal_satisfying_sets(rules, {"raw_series"}, "seg_mask")
    assert minimal == [frozenset({"convert", "qa", "seg"})]


def test_existing_targets_mean_empty_plan(tmp_path, toy_catalog):
    registry = seeded_registry(tmp_path)
    for subject, session in TWO_SCOPES:
        registry.register(make_root_artifact("seg_mask", f"prior_{subject}",
                                             subject, session))
    result = assemble(Goal(target_type="seg_mask"), registry, toy_catalog)
    assert result.config is not None
    assert result.config.instances == ()
    assert "already satisfied" in render_plan(result.config)


def test_partial_existing_plans_only_missing_scopes(tmp_path, toy_catalog):
    registry = seeded_registry(tmp_path)
    registry.register(make_root_artifact("seg_mask", "prior", "S01", "A"))
    result = assemble(Goal(target_type="seg_mask"), registry, toy_catalog)
    scopes = {i.scope for i in result.config.instances}
    assert scopes == {("S02", "A")}


def test_dual_producers_raise_clarification_not_tiebreak(tmp_path, dual_catalog_dir):
    registry = seeded_registry(tmp_path)
    catalog = load_catalog(dual_catalog_dir)
    result = assemble(Goal(target_type="seg_mask"), registry, catalog)
    assert result.needs_clarification
    [clar] = result.clarifications
    assert clar.binding_target == "producer.seg_mask"
    assert clar.options == ("seg", "seg_alt")  # both candidates, lexicographic
    # answering via directive resolves it
    resolved = assemble(
        Goal(target_type="seg_mask", directives=(("producer.seg_mask", "seg_alt"),)),
        registry, catalog)
    assert resolved.config is not None
    assert "seg_alt" in resolved.config.rule_ids()


def test_unknown_type_is_infeasible(tmp_path, toy_catalog):
    registry = seeded_registry(tmp_path)
    with pytest.raises(InfeasibleGoal):
        assemble(Goal(target_type="xyz"), registry, toy_catalog)


def test_producer_cycle_reported_with_cycle(tmp_path, cyclic_catalog_dir):
    registry = Registry()
    registry.register(make_root_artifact("seed", "s", "S01", "A"))
    catalog = load_catalog(cyclic_catalog_dir)
    with pytest.raises(CyclicCatalogError) as err:
        assemble(Goal(target_type="type_a"), registry, catalog)
    assert set(err.value.cycle) >= {"ping", "pong"}


# -- fan-out -----------------------------------------------------------------------


def two_kernel_cohort(tmp_path):
    root = tmp_path / "data"
    for kernel in ("B30f", "B60f"):
        write_session_file(
            root, "S01", "A", f"series_{kernel}.dcm", f"k{kernel}".encode(),
            {"type": "raw_series", "modality": "CT", "reconstruction_kernel": kernel})
    write_session_file(root, "S02", "A", "series01.dcm", b"solo",
                       {"type": "raw_series", "modality": "CT"})
    registry = Registry()
    inspect_dataset(root, registry)
    return registry


def test_multiple_kernels_ask_before_fanning_out(tmp_path, toy_catalog):
    registry = two_kernel_cohort(tmp_path)
    result = assemble(Goal(target_type="seg_mask"), registry, toy_catalog)
    assert result.needs_clarification
    [clar] = result.clarifications
    assert clar.binding_target == "fanout.convert.series"
    assert clar.options == ("all", "first")
    assert "all" in clar.question.lower() or "all" in clar.options
    # the tentative rule selection is still visible while asking
    assert result.suggested_rule_ids == ["convert", "qa", "seg"]


def test_fanout_all_replicates_the_branch_pipeline(tmp_path, toy_catalog):
    registry = two_kernel_cohort(tmp_path)
    result = assemble(
        Goal(target_type="seg_mask", directives=(("fanout.convert.series", "all"),)),
        registry, toy_catalog)
    config = result.config
    assert config is not None
    per_rule = {}
    for inst in config.instances:
        per_rule.setdefault(inst.rule_id, []).append(inst)
    # S01 fans out into two branches, S02 stays single
    assert len(per_rule["convert"]) == 3
    assert len(per_rule["qa"]) == 3
    assert len(per_rule["seg"]) == 3
    # branch pairing: each seg consumes the qa_report of its own branch
    for seg in per_rule["seg"]:
        bindings = seg.binding_map()
        image_ref = bindings["image"]
        report_ref = bindings["report"]
        assert image_ref[0] == "planned" and report_ref[0] == "planned"
        qa_inst = next(i for i in per_rule["qa"] if i.instance_id == report_ref[1])
        assert qa_inst.binding_map()["image"] == image_ref


def test_fanout_first_picks_lexicographic_smallest(tmp_path, toy_catalog):
    registry = two_kernel_cohort(tmp_path)
    result = assemble(
        Goal(target_type="seg_mask", directives=(("fanout.convert.series", "first"),)),
        registry, toy_catalog)
    converts = [i for i in result.config.instances if i.rule_id == "convert"
                and i.subject == "S01"]
    assert len(converts) == 1
    assert converts[0].binding_map()["series"][2] == "S01/A/series_B30f.dcm"


# -- determinism and minimality ----------------------------------------------------


def test_assemble_twice_is_byte_identical(tmp_path, toy_catalog):
    registry = seeded_registry(tmp_path)
    goal = Goal(target_type="seg_mask")
    a = assemble(goal, registry, toy_catalog).config
    b = assemble(goal, registry, toy_catalog).config
    from provwf.canonical import canonical_json_bytes
    assert canonical_json_bytes(a.to_canonical()) == canonical_json_bytes(b.to_canonical())
    assert a.fingerprint == b.fingerprint


def _random_chain_catalog(rng: Random, tmp_path, n_rules: int):
    """Random single-producer DAG catalogs (<= 8 rules) plus a goal target."""
    types = [f"t{i}" for i in range(n_rules + 1)]
    rules = {}
    for i in range(n_rules):
        # rule i consumes between 1 and 3 earlier types, produces types[i+1]
        pool = types[: i + 1]
        k = min(len(pool), rng.randint(1, 3))
        ins = sorted(rng.sample(pool, k))
        rules[f"r{i}"] = (ins, [types[i + 1]])
    texts = {rid: _chain_rule(rid, ins, outs) for rid, (ins, outs) in rules.items()}
    catalog = load_catalog(write_catalog(tmp_path, texts))
    return catalog, rules, types


def test_minimality_matches_exhaustive_search(tmp_path):
    rng = Random(42)
    for case in range(25):
        n = rng.randint(2, 8)
        catalog, rules, types = _random_chain_catalog(
            rng, tmp_path / f"cat{case}", n)
        registry = Registry()
        registry.register(make_root_artifact("t0", "root0", "S01", "A"))
        target = types[-1]
        result = assemble(Goal(target_type=target), registry, catalog)
        assert result.config is not None, f"case {case} failed to plan"
        planned = frozenset(result.config.rule_ids())
        minimal = minimal_satisfying_sets(rules, {"t0"}, target)
        assert planned in minimal, (case, planned, minimal)
        # single-producer catalogs have a unique minimal set
        assert len(minimal) == 1


def test_dual_producer_catalogs_always_clarify(tmp_path):
    """No silent choices: two distinct plans -> clarification, fuzzing shapes."""
    rng = Random(7)
    for case in range(10):
        depth = rng.randint(1, 3)
        texts = {}
        prev = "t0"
        for i in range(depth):
            texts[f"step{i}"] = _chain_rule(f"step{i}", [prev], [f"t{i + 1}"])
            prev = f"t{i + 1}"
        # two competing producers of the final goal type
        texts["fin_a"] = _chain_rule("fin_a", [prev], ["goal_t"])
        texts["fin_b"] = _chain_rule("fin_b", [prev], ["goal_t"])
        catalog = load_catalog(write_catalog(tmp_path / f"dual{case}", texts))
        registry = Registry()
        registry.register(make_root_artifact("t0", "r", "S01", "A"))
        result = assemble(Goal(target_type="goal_t"), registry, catalog)
        assert result.needs_clarification
        assert result.clarifications[0].options == ("fin_a", "fin_b")


def test_lung14_dependency_closure_selects_twelve(tmp_path, lung14_catalog_dir):
    catalog = load_catalog(lung14_catalog_dir)
    registry = Registry()
    registry.register(make_root_artifact("archive", "cohort.zip", "S01", "A"))
    result = assemble(Goal(target_type="volume_table"), registry, catalog)
    assert result.config is not None
    assert result.config.rule_ids() == sorted(LUNG14_GOAL_RULES)
    assert len(result.config.rule_ids()) == 12


# -- feasibility ---------------------------------------------------------------------


def test_feasibility_reports_assumptions(tmp_path, toy_catalog):
    registry = seeded_registry(tmp_path)
    report = check_feasibility(Goal(target_type="seg_mask"), registry, toy_catalog)
    assert report.satisfiable
    assert report.missing_capabilities == ()
    assert any("target_spacing" in a for a in report.assumptions)


def test_feasibility_names_exactly_the_missing_link(tmp_path):
    texts = {
        "mid": _chain_rule("mid", ["missing_link"], ["middle"]),
        "top": _chain_rule("top", ["middle"], ["wanted"]),
    }
    catalog = load_catalog(write_catalog(tmp_path / "rules", texts))
    registry = Registry()
    registry.register(make_root_artifact("unrelated", "u", "S01", "A"))
    report = check_feasibility(Goal(target_type="wanted"), registry, catalog)
    assert not report.satisfiable
    assert report.missing_capabilities == ("missing_link",)


# -- approval ----------------------------------------------------------------------


def test_approve_seals_and_is_idempotent(tmp_path, toy_catalog):
    registry = seeded_registry(tmp_path)
    draft = assemble(Goal(target_type="seg_mask"), registry, toy_catalog).config
    sealed = approve(draft)
    assert sealed.seal == APPROVED
    assert sealed.fingerprint == draft.fingerprint  # sealing does not change identity
    assert approve(sealed) is sealed


def test_approved_config_is_immutable(tmp_path, toy_catalog):
    registry = seeded_registry(tmp_path)
    sealed = approve(assemble(Goal(target_type="seg_mask"), registry, toy_catalog).config)
    with pytest.raises(dataclasses.FrozenInstanceError):
        sealed.seal = "DRAFT"
    with pytest.raises(dataclasses.FrozenInstanceError):
        sealed.instances = ()


def test_fingerprint_survives_serialization_round_trip(tmp_path, toy_catalog):
    registry = seeded_registry(tmp_path)
    sealed = approve(assemble(Goal(target_type="seg_mask"), registry, toy_catalog).config)
    blob = json.dumps(sealed.to_record())
    loaded = Configuration.from_record(json.loads(blob))
    assert loaded.fingerprint == sealed.fingerprint
    assert loaded.seal == APPROVED


def test_tampered_plan_record_rejected(tmp_path, toy_catalog):
    registry = seeded_registry(tmp_path)
    sealed = approve(assemble(Goal(target_type="seg_mask"), registry, toy_catalog).config)
    record = sealed.to_record()
    record["instances"] = record["instances"][:-1]
    with pytest.raises(ApprovalError):
        Configuration.from_record(record)


# -- rendering / goals ------------------------------------------------------------------


def test_render_plan_lists_rules_and_assumptions(tmp_path, toy_catalog):
    registry = seeded_registry(tmp_path)
    config = assemble(Goal(target_type="seg_mask"), registry, toy_catalog).config
    text = render_plan(config)
    assert "- convert: 2 instance(s)" in text
    assert "- qa: 2 instance(s)" in text
    assert "- seg: 2 instance(s)" in text
    assert "Assumptions made:" in text
    assert "target_spacing" in text


def test_goal_toml_round_trip(tmp_path, toy_catalog):
    registry = seeded_registry(tmp_path)
    goal = parse_goal_toml(
        'target_type = "seg_mask"\n'
        '[scope]\nsubject = "S01"\n'
        '[directives]\n"param.seg.model" = "unet9"\n',
        toy_catalog, registry)
    assert goal.subject == "S01"
    assert goal.directive_map() == {"param.seg.model": "unet9"}
    result = assemble(goal, registry, toy_catalog)
    segs = [i for i in result.config.instances if i.rule_id == "seg"]
    assert all(i.param_map()["model"] == "unet9" for i in segs)


def test_bad_directive_is_rejected(tmp_path, toy_catalog):
    registry = seeded_registry(tmp_path)
    with pytest.raises(InfeasibleGoal):
        parse_goal_toml(
            'target_type = "seg_mask"\n[directives]\n"param.seg.banana" = 1\n',
            toy_catalog, registry)


def test_keyword_goal_interpretation(toy_catalog):
    goal = keyword_goal("please segment the masks for this cohort", toy_catalog)
    assert goal is not None and goal.target_type == "seg_mask"
    assert keyword_goal("defenestrate the cohort", toy_catalog) is None


def test_interpret_goal_structured_and_clarifying(tmp_path, toy_catalog):
    registry = seeded_registry(tmp_path)
    outcome = interpret_goal({"target_type": "seg_mask"}, registry, toy_catalog)
    assert isinstance(outcome, Goal)

    registry2 = two_kernel_cohort(tmp_path)
    outcome2 = interpret_goal({"target_type": "seg_mask"}, registry2, toy_catalog)
    assert isinstance(outcome2, list)
    assert all(isinstance(c, Clarification) for c in outcome2)


def test_goal_adapter_proposals_land_in_the_same_goal_type(tmp_path, toy_catalog):
    class TomlAdapter:
        def translate(self, text):
            return 'target_type = "qa_report"\n'

    registry = seeded_registry(tmp_path)
    outcome = interpret_goal("please screen everything", registry, toy_catalog,
                             goal_adapter=TomlAdapter())
    assert isinstance(outcome, Goal)
    assert outcome.target_type == "qa_report"

    class BadAdapter:
        def translate(self, text):
            return 'target_type = "made_up"\n'

    with pytest.raises(InfeasibleGoal):
        interpret_goal("nonsense", registry, toy_catalog, goal_adapter=BadAdapter())
