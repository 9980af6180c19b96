"""Deterministic DAG execution with content-fingerprint skip semantics.

An approved configuration compiles into a task DAG whose canonical byte form
defines DAG equivalence. Execution is ready-set scheduling: a task runs only
when its producers are DONE or SKIPPED, skips when every declared output is
already registered under the current task fingerprint (rule fingerprint,
bound parameters, input content hashes), and failure poisons only the
downstream closure. Runners produce files plus a ``result.json`` sidecar;
the executor alone validates results and registers artifacts, so contract
enforcement lives in one place.
"""

from __future__ import annotations

import json
import os
import shlex
import shutil
import subprocess
import threading
import uuid
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .assembler import APPROVED, Configuration, RuleInstance
from .canonical import canonical_json_bytes, digest, hash_file
from .contract import Artifact, ProvenanceRecord, Registry
from .errors import ApprovalError, ContractViolation, StaleConfigError
from .provgraph import provenance_of  # noqa: F401  (re-exported: provenance lives with execution)
from .rules import Catalog, OutputSlot, RuleSpec
from .values import kind_of

PENDING = "PENDING"
READY = "READY"
RUNNING = "RUNNING"
DONE = "DONE"
SKIPPED = "SKIPPED"
FAILED = "FAILED"

STORE_ENV = "PROVWF_STORE"

# input refs inside a built DAG: ("artifact", artifact_id) or ("task", key, slot)
InputRef = tuple[str, ...]


@dataclass(frozen=True)
class TaskNode:
    task_key: str
    instance: RuleInstance
    rule: RuleSpec
    inputs: tuple[tuple[str, InputRef], ...]  # slot name -> ref

    @property
    def rule_id(self) -> str:
        return self.instance.rule_id

    @property
    def scope(self) -> tuple[str, str]:
        return self.instance.scope

    def input_map(self) -> dict[str, InputRef]:
        return dict(self.inputs)

    def to_canonical(self) -> dict[str, Any]:
        return {
            "task_key": self.task_key,
            "rule_id": self.instance.rule_id,
            "scope": {"subject": self.instance.subject, "session": self.instance.session},
            "inputs": {name: list(ref) for name, ref in self.inputs},
            "params": self.instance.param_map(),
            "outputs": [
                {"name": o.name, "type": o.produced_type} for o in self.rule.outputs
            ],
        }


@dataclass
class WorkflowDAG:
    config: Configuration
    nodes: dict[str, TaskNode]
    edges: list[tuple[str, str, str]]  # producer key, consumer key, consumer slot

    def __len__(self) -> int:
        return len(self.nodes)


def _resolve_existing(registry: Registry, artifact_type: str, logical_name: str,
                      subject: str, session: str) -> Artifact:
    """Latest registered artifact for a symbolic binding, searched from the
    instance scope outward (exact scope, subject level, dataset level)."""
    for sub, ses in ((subject, session), (subject, ""), ("", "")):
        found = registry.current(artifact_type, sub, ses, logical_name)
        if found is not None:
            return found
    raise StaleConfigError(
        f"configuration binds {artifact_type} '{logical_name}' "
        f"(scope {subject}/{session}) but no such artifact is registered"
    )


def task_fingerprint(rule_fp: str, rule_id: str, params: dict[str, Any],
                     input_hashes: list[str]) -> str:
    """Pure content fingerprint: wall time, host, and worker never enter."""
    return digest({
        "rule_id": rule_id,
        "rule_fingerprint": rule_fp,
        "params": params,
        "input_hashes": sorted(input_hashes),
    })


def output_logical_name(instance: RuleInstance, slot: OutputSlot) -> str:
    """Stable role name for a produced artifact.

    The instance-id suffix separates fan-out siblings; it is derived from
    symbolic bindings, so re-running after an input content change keeps the
    same name and supersedes the previous version.
    """
    return f"{instance.rule_id}.{slot.name}@{instance.instance_id[:8]}"


def build_dag(config: Configuration, registry: Registry, catalog: Catalog,
              require_approved: bool = True) -> WorkflowDAG:
    """Compile a configuration into a task DAG against the current registry."""
    if require_approved and config.seal != APPROVED:
        raise ApprovalError("only APPROVED configurations are executable")
    if config.catalog_fingerprint != catalog.catalog_fingerprint:
        raise StaleConfigError(
            "configuration was assembled against a different catalog "
            f"({config.catalog_fingerprint[:12]} != {catalog.catalog_fingerprint[:12]})"
        )
    nodes: dict[str, TaskNode] = {}
    edges: set[tuple[str, str, str]] = set()
    key_by_instance: dict[str, str] = {}
    for instance in config.instances:  # topologically ordered by construction
        rule = catalog.get(instance.rule_id)
        if rule is None:
            raise StaleConfigError(f"rule '{instance.rule_id}' is missing from the catalog")
        resolved: dict[str, InputRef] = {}
        for slot_name, binding in instance.bindings:
            if binding[0] == "artifact":
                artifact = _resolve_existing(
                    registry, binding[1], binding[2], instance.subject, instance.session
                )
                resolved[slot_name] = ("artifact", artifact.id)
            else:
                producer_key = key_by_instance[binding[1]]
                resolved[slot_name] = ("task", producer_key, binding[2])
        task_key = digest({
            "rule_id": instance.rule_id,
            "scope": {"subject": instance.subject, "session": instance.session},
            "inputs": {name: list(ref) for name, ref in sorted(resolved.items())},
            "params": instance.param_map(),
        })
        node = TaskNode(
            task_key=task_key,
            instance=instance,
            rule=rule,
            inputs=tuple(sorted(resolved.items())),
        )
        nodes[task_key] = node
        key_by_instance[instance.instance_id] = task_key
        for slot_name, ref in node.inputs:
            if ref[0] == "task":
                edges.add((ref[1], task_key, slot_name))
    return WorkflowDAG(config=config, nodes=nodes, edges=sorted(edges))


def canonicalize_dag(dag: WorkflowDAG) -> bytes:
    """Canonical DAG bytes; byte equality defines DAG equivalence."""
    body = {
        "config_fingerprint": dag.config.fingerprint,
        "nodes": [dag.nodes[k].to_canonical() for k in sorted(dag.nodes)],
        "edges": [list(e) for e in sorted(dag.edges)],
    }
    return canonical_json_bytes(body)


# -- runners -----------------------------------------------------------------


@dataclass
class TaskContext:
    """Everything a runner may see: materialized inputs and a workspace."""

    node: TaskNode
    workspace: Path
    input_paths: dict[str, Path]  # slot name -> payload path (may be missing for record-only)
    input_hashes: dict[str, str]  # slot name -> content hash
    params: dict[str, Any]


class RunnerFailure(Exception):
    """A runner signals task failure with diagnostics."""


class MockRunner:
    """Deterministic in-process runner: outputs are pure functions of the
    rule, its parameters, and the input content hashes. The whole test and
    acceptance suite runs on it without any external tool.
    """

    def __init__(self, emit: dict[str, dict[str, Any]] | None = None,
                 should_fail: Callable[[TaskNode], bool] | None = None):
        self.emit = emit or {}
        self.should_fail = should_fail

    def run(self, ctx: TaskContext) -> None:
        if self.should_fail is not None and self.should_fail(ctx.node):
            raise RunnerFailure(f"mock failure injected for rule {ctx.node.rule_id}")
        result: dict[str, Any] = {"outputs": {}}
        for slot in ctx.node.rule.outputs:
            seed = {
                "rule": ctx.node.rule_id,
                "slot": slot.name,
                "params": ctx.params,
                "inputs": sorted(ctx.input_hashes.values()),
            }
            filename = f"{slot.name}__{slot.produced_type}.dat"
            (ctx.workspace / filename).write_bytes(canonical_json_bytes(seed))
            attributes = {}
            for name in ctx.node.rule.emits:
                override = self.emit.get(ctx.node.rule_id, {})
                if name in override:
                    attributes[name] = override[name]
                else:
                    attributes[name] = digest({"emit": name, "seed": seed})[:12]
            result["outputs"][slot.name] = {"path": filename, "attributes": attributes}
        (ctx.workspace / "result.json").write_text(json.dumps(result), encoding="utf-8")


class SubprocessRunner:
    """Executes the rule's action template in the task workspace.

    Placeholders: {input.NAME} expands to the materialized input path,
    {output.NAME} to the conventional output filename, {param.NAME} to the
    bound value. The action must leave a result.json behind.
    """

    def __init__(self, timeout: float | None = None):
        self.timeout = timeout

    def run(self, ctx: TaskContext) -> None:
        action = ctx.node.rule.action
        if not action:
            raise RunnerFailure(f"rule {ctx.node.rule_id} has no action template")
        mapping: dict[str, str] = {}
        for slot_name, path in ctx.input_paths.items():
            mapping[f"input.{slot_name}"] = str(path)
        for slot in ctx.node.rule.outputs:
            mapping[f"output.{slot.name}"] = f"{slot.name}__{slot.produced_type}.dat"
        for name, value in ctx.params.items():
            mapping[f"param.{name}"] = str(value)
        command = action
        for key, value in mapping.items():
            command = command.replace("{" + key + "}", shlex.quote(value))
        proc = subprocess.run(
            command, shell=True, cwd=ctx.workspace,
            capture_output=True, text=True, timeout=self.timeout,
        )
        if proc.returncode != 0:
            raise RunnerFailure(
                f"action exited {proc.returncode}: {proc.stderr.strip() or proc.stdout.strip()}"
            )


# -- execution ---------------------------------------------------------------


@dataclass
class RunPaths:
    """Filesystem layout for one executor run."""

    work_root: Path
    dataset_root: Path
    store_root: Path

    @classmethod
    def create(cls, work_root: str | Path, dataset_root: str | Path,
               store_root: str | Path | None = None) -> "RunPaths":
        work = Path(work_root)
        store = Path(store_root or os.environ.get(STORE_ENV) or work / "store")
        work.mkdir(parents=True, exist_ok=True)
        store.mkdir(parents=True, exist_ok=True)
        return cls(work_root=work, dataset_root=Path(dataset_root), store_root=store)

    def resolve_payload(self, payload_path: str) -> Path:
        if payload_path.startswith("store/"):
            return self.store_root / payload_path[len("store/"):]
        if payload_path.startswith("derived/"):
            return self.work_root / payload_path
        return self.dataset_root / payload_path


@dataclass
class RunReport:
    run_id: str
    config_fingerprint: str
    tasks: dict[str, dict[str, Any]] = field(default_factory=dict)
    executed: int = 0
    skipped: int = 0
    failed: int = 0
    registered: int = 0

    @property
    def ok(self) -> bool:
        return self.failed == 0

    def to_record(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "config_fingerprint": self.config_fingerprint,
            "counts": {"executed": self.executed, "skipped": self.skipped, "failed": self.failed},
            "registered": self.registered,
            "tasks": self.tasks,
        }


class _FingerprintIndex:
    """Task fingerprint -> registered artifacts, derived from provenance."""

    def __init__(self, registry: Registry, catalog: Catalog):
        self.registry = registry
        self.catalog = catalog
        self.by_fp: dict[str, list[Artifact]] = {}
        for artifact in registry:
            self._add(artifact)

    def _add(self, artifact: Artifact) -> None:
        prov = artifact.provenance
        if prov.kind != "DERIVED":
            return
        input_hashes = [self.registry.get(i).content_hash for i in prov.input_ids]
        fp = task_fingerprint(prov.rule_fingerprint, prov.rule_id,
                              dict(prov.param_binding), input_hashes)
        self.by_fp.setdefault(fp, []).append(artifact)

    def outputs_for(self, node: TaskNode, fp: str) -> dict[str, str] | None:
        """Registered artifact per output slot under fp, or None if incomplete."""
        candidates = self.by_fp.get(fp, [])
        found: dict[str, str] = {}
        for slot in node.rule.outputs:
            expected_name = output_logical_name(node.instance, slot)
            for artifact in candidates:
                if (artifact.artifact_type == slot.produced_type
                        and artifact.logical_name == expected_name
                        and artifact.scope == node.scope):
                    found[slot.name] = artifact.id
                    break
            else:
                return None
        return found


def needs_run(node: TaskNode, resolved_input_ids: dict[str, str],
              registry: Registry, catalog: Catalog,
              index: _FingerprintIndex | None = None) -> bool:
    """False iff every declared output is registered under the current fingerprint."""
    index = index or _FingerprintIndex(registry, catalog)
    fp = _current_fingerprint(node, resolved_input_ids, registry, catalog)
    return index.outputs_for(node, fp) is None


def _current_fingerprint(node: TaskNode, resolved_input_ids: dict[str, str],
                         registry: Registry, catalog: Catalog) -> str:
    input_hashes = [registry.get(i).content_hash for i in resolved_input_ids.values()]
    return task_fingerprint(
        catalog.fingerprint_of(node.rule_id), node.rule_id,
        node.instance.param_map(), input_hashes,
    )


def _render_template(value: Any, params: dict[str, Any]) -> Any:
    if not isinstance(value, str):
        return value
    import re
    whole = re.fullmatch(r"\{param\.([A-Za-z_][A-Za-z0-9_]*)\}", value)
    if whole:
        return params.get(whole.group(1))
    return re.sub(
        r"\{param\.([A-Za-z_][A-Za-z0-9_]*)\}",
        lambda m: str(params.get(m.group(1), "")),
        value,
    )


def execute(
    dag: WorkflowDAG,
    runner,
    registry: Registry,
    paths: RunPaths,
    workers: int = 1,
    run_id: str | None = None,
) -> RunReport:
    """Run the DAG: skip unchanged tasks, register outputs with provenance.

    The final registry state (artifact ids and fingerprints) is a pure
    function of dataset, configuration, and catalog; worker count only
    changes interleaving.
    """
    if dag.config.seal != APPROVED:
        raise ApprovalError("execution requires an APPROVED configuration")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    run_id = run_id or f"run-{uuid.uuid4().hex[:12]}"
    catalog_view = _CatalogView(dag)
    report = RunReport(run_id=run_id, config_fingerprint=dag.config.fingerprint)
    index = _FingerprintIndex(registry, catalog_view)

    producers: dict[str, set[str]] = {k: set() for k in dag.nodes}
    consumers: dict[str, set[str]] = {k: set() for k in dag.nodes}
    for producer, consumer, _slot in dag.edges:
        producers[consumer].add(producer)
        consumers[producer].add(consumer)

    states = {k: PENDING for k in dag.nodes}
    outputs_of: dict[str, dict[str, str]] = {}
    diagnostics: dict[str, str] = {}
    lock = threading.Lock()

    def resolve_inputs(node: TaskNode) -> dict[str, str]:
        resolved = {}
        for slot_name, ref in node.inputs:
            if ref[0] == "artifact":
                resolved[slot_name] = ref[1]
            else:
                resolved[slot_name] = outputs_of[ref[1]][ref[2]]
        return resolved

    def run_one(node: TaskNode, resolved: dict[str, str], fp: str) -> dict[str, str]:
        workspace = paths.work_root / "runs" / run_id / node.task_key[:16]
        workspace.mkdir(parents=True, exist_ok=True)
        input_paths: dict[str, Path] = {}
        input_hashes: dict[str, str] = {}
        for slot_name, art_id in resolved.items():
            artifact = registry.get(art_id)
            input_hashes[slot_name] = artifact.content_hash
            if artifact.payload_path:
                input_paths[slot_name] = paths.resolve_payload(artifact.payload_path)
        ctx = TaskContext(
            node=node, workspace=workspace, input_paths=input_paths,
            input_hashes=input_hashes, params=node.instance.param_map(),
        )
        runner.run(ctx)
        return register_outputs(node, ctx, resolved, fp)

    def register_outputs(node: TaskNode, ctx: TaskContext,
                         resolved: dict[str, str], fp: str) -> dict[str, str]:
        result_path = ctx.workspace / "result.json"
        if not result_path.exists():
            raise ContractViolation(f"task {node.rule_id} produced no result.json")
        try:
            result = json.loads(result_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ContractViolation(f"result.json is not valid JSON: {exc}") from exc
        declared = result.get("outputs", {})
        produced: dict[str, str] = {}
        params = node.instance.param_map()
        for slot in node.rule.outputs:
            entry = declared.get(slot.name)
            if entry is None or "path" not in entry:
                raise ContractViolation(
                    f"result.json misses declared output '{slot.name}' of rule {node.rule_id}"
                )
            emitted = entry.get("attributes", {})
            undeclared = sorted(set(emitted) - set(node.rule.emits))
            if undeclared:
                raise ContractViolation(
                    f"rule {node.rule_id} emitted undeclared attributes: {', '.join(undeclared)}"
                )
            for name, value in emitted.items():
                if value is not None and kind_of(value) is None:
                    raise ContractViolation(f"emitted attribute '{name}' is not a scalar")
            out_file = ctx.workspace / entry["path"]
            if not out_file.is_file():
                raise ContractViolation(
                    f"declared output file '{entry['path']}' was not produced"
                )
            content_hash = hash_file(out_file)
            store_dir = paths.store_root / content_hash[:2] / content_hash
            store_dir.mkdir(parents=True, exist_ok=True)
            stored = store_dir / out_file.name
            if not stored.exists():
                shutil.copy2(out_file, stored)
            attributes: dict[str, Any] = {}
            for key, template in slot.attribute_template.items():
                attributes[key] = _render_template(template, params)
            attributes.update(emitted)
            artifact = Artifact(
                artifact_type=slot.produced_type,
                logical_name=output_logical_name(node.instance, slot),
                subject=node.instance.subject,
                session=node.instance.session,
                attributes=attributes,
                provenance=ProvenanceRecord(
                    kind="DERIVED",
                    rule_id=node.rule_id,
                    rule_fingerprint=catalog_view.fingerprint_of(node.rule_id),
                    param_binding=params,
                    input_ids=tuple(sorted(resolved.values())),
                ),
                content_hash=content_hash,
                payload_path=f"store/{content_hash[:2]}/{content_hash}/{out_file.name}",
            )
            registry.register(artifact, run_id=run_id)
            with lock:
                report.registered += 1
                index._add(registry.get(artifact.id))
            produced[slot.name] = artifact.id
        return produced

    def fail_downstream(key: str) -> None:
        stack = [key]
        while stack:
            current = stack.pop()
            for consumer in consumers[current]:
                if states[consumer] not in (FAILED,):
                    states[consumer] = FAILED
                    diagnostics[consumer] = f"upstream task failed: {dag.nodes[key].rule_id}"
                    stack.append(consumer)

    ready = sorted(k for k in dag.nodes if not producers[k])
    waiting = {k for k in dag.nodes if producers[k]}
    futures = {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        while ready or futures:
            while ready:
                key = ready.pop(0)
                if states[key] == FAILED:  # poisoned while queued
                    continue
                node = dag.nodes[key]
                resolved = resolve_inputs(node)
                fp = _current_fingerprint(node, resolved, registry, catalog_view)
                existing = index.outputs_for(node, fp)
                if existing is not None:
                    states[key] = SKIPPED
                    outputs_of[key] = existing
                    _release(key, producers, waiting, ready, states)
                    continue
                states[key] = RUNNING
                futures[pool.submit(run_one, node, resolved, fp)] = key
            if not futures:
                break
            done, _ = wait(list(futures), return_when=FIRST_COMPLETED)
            for future in done:
                key = futures.pop(future)
                node = dag.nodes[key]
                try:
                    outputs_of[key] = future.result()
                    states[key] = DONE
                    _release(key, producers, waiting, ready, states)
                except (RunnerFailure, ContractViolation, subprocess.TimeoutExpired, OSError) as exc:
                    states[key] = FAILED
                    diagnostics[key] = str(exc)
                    fail_downstream(key)

    for key in sorted(dag.nodes):
        state = states[key]
        node = dag.nodes[key]
        entry: dict[str, Any] = {
            "state": state,
            "rule_id": node.rule_id,
            "scope": {"subject": node.instance.subject, "session": node.instance.session},
        }
        if key in outputs_of:
            entry["artifact_ids"] = sorted(outputs_of[key].values())
        if key in diagnostics:
            entry["diagnostics"] = diagnostics[key]
        report.tasks[key] = entry
        if state == DONE:
            report.executed += 1
        elif state == SKIPPED:
            report.skipped += 1
        else:
            report.failed += 1
    return report


def _release(done_key: str, producers: dict[str, set[str]], waiting: set[str],
             ready: list[str], states: dict[str, str]) -> None:
    released = []
    for key in list(waiting):
        producers[key].discard(done_key)
        if not producers[key] and states[key] != FAILED:
            released.append(key)
            waiting.discard(key)
    for key in sorted(released):
        ready.append(key)


class _CatalogView:
    """Rule fingerprints for the rules a DAG actually uses."""

    def __init__(self, dag: WorkflowDAG):
        from .rules import rule_fingerprint
        self._fps = {n.rule_id: rule_fingerprint(n.rule) for n in dag.nodes.values()}
        self.rules = {n.rule_id: n.rule for n in dag.nodes.values()}

    def fingerprint_of(self, rule_id: str) -> str:
        return self._fps[rule_id]


def write_dag_file(dag: WorkflowDAG, path: str | Path) -> None:
    Path(path).write_bytes(canonicalize_dag(dag))


def write_run_report(report: RunReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_record(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
