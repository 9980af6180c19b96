"""Command-line front door.

Exit codes are stable per error class so scripts can branch on them:
0 success, 2 usage, and the classes listed in EXIT_CODES below. `run`
exits 0 only when no task failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from . import query as query_mod
from .assembler import interpret_goal, render_plan, assemble, Goal
from .errors import (
    AdapterUnavailable,
    ApprovalError,
    CatalogError,
    ContractViolation,
    InfeasibleGoal,
    IntegrityError,
    IoError,
    NotFound,
    ProvwfError,
    QuerySyntaxError,
    StaleConfigError,
    TranslationFailed,
    Unavailable,
    Unfinished,
)
from .executor import MockRunner, SubprocessRunner, build_dag, canonicalize_dag, execute, write_run_report
from .harness import run_trial
from .inspector import inspect_dataset
from .query import HttpAdapter
from .session import PlanningSession
from .workspace import Workspace

EXIT_CODES = [
    (ContractViolation, 3),
    (IntegrityError, 4),
    (CatalogError, 5),
    (InfeasibleGoal, 6),
    (StaleConfigError, 7),
    (ApprovalError, 7),
    (QuerySyntaxError, 8),
    (TranslationFailed, 8),
    (NotFound, 9),
    (AdapterUnavailable, 11),
    (Unavailable, 12),
    (Unfinished, 13),
    (IoError, 14),
]
RUN_FAILED_EXIT = 10


def _exit_code(exc: Exception) -> int:
    for klass, code in EXIT_CODES:
        if isinstance(exc, klass):
            return code
    return 1


def _workspace(args) -> Workspace:
    return Workspace(args.workspace, dataset_root=getattr(args, "dataset", None),
                     catalog_dir=getattr(args, "catalog", None))


def cmd_inspect(args) -> int:
    ws = _workspace(args)
    root = Path(args.root) if args.root else ws.dataset_root
    summary = inspect_dataset(root, ws.registry, payload_dir=ws.derived_dir)
    print(f"inspected {root}")
    print(f"  files: {summary.file_count}  subjects: {summary.subject_count}  "
          f"sessions: {summary.session_count}")
    print(f"  organization: {summary.organization}")
    if summary.modality_counts:
        mods = ", ".join(f"{m}={n}" for m, n in sorted(summary.modality_counts.items()))
        print(f"  modalities: {mods}")
    if summary.manufacturers:
        print(f"  manufacturers: {', '.join(summary.manufacturers)}")
    if summary.prior_processing:
        print(f"  prior processing: {', '.join(summary.prior_processing)}")
    print(f"  registry: {len(ws.registry)} artifact(s)")
    return 0


def cmd_plan(args) -> int:
    ws = _workspace(args)
    if args.goal == "-":
        return _interactive_plan(ws)
    source = Path(args.goal)
    request = source if source.exists() else args.goal
    outcome = interpret_goal(request, ws.registry, ws.catalog)
    if not isinstance(outcome, Goal):
        print("The goal needs clarification before a plan can be drafted:")
        for i, c in enumerate(outcome, 1):
            print(f"  {i}. {c.question}")
            print(f"     options: {', '.join(c.options)}  (directive: {c.binding_target})")
        print("Add choices under [directives] in the goal file and re-run.")
        return 6
    result = assemble(outcome, ws.registry, ws.catalog)
    assert result.config is not None
    plan_id = ws.save_plan(result.config)
    print(render_plan(result.config))
    print(f"plan id: {plan_id} (draft; approve with `provwf approve {plan_id}`)")
    return 0


def _interactive_plan(ws: Workspace) -> int:
    session = PlanningSession(ws.registry, ws.catalog)
    print("Interactive planning. Type a goal (free text or goal TOML); "
          "'approve' to seal, 'quit' to leave.")
    for line in sys.stdin:
        text = line.strip()
        if not text:
            continue
        if text in ("quit", "exit"):
            return 0
        if text == "approve":
            sealed = session.approve()
            plan_id = ws.save_plan(sealed)
            print(f"approved: plan id {plan_id} fingerprint {sealed.fingerprint}")
            return 0
        reply = session.advance(text)
        print(reply.get("summary", reply["status"]))
    return 0


def cmd_approve(args) -> int:
    ws = _workspace(args)
    sealed = ws.approve_plan(args.plan_id)
    print(f"approved {args.plan_id}: fingerprint {sealed.fingerprint}")
    return 0


def cmd_run(args) -> int:
    ws = _workspace(args)
    config = ws.require_approved(args.plan_id)
    runner = MockRunner() if args.runner == "mock" else SubprocessRunner()
    with ws.run_lock():
        dag = build_dag(config, ws.registry, ws.catalog)
        report = execute(dag, runner, ws.registry, ws.run_paths(), workers=args.workers)
    run_dir = ws.root / "runs" / report.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    write_run_report(report, run_dir / "run_report.json")
    (run_dir / "workflow.dag.json").write_bytes(canonicalize_dag(dag))
    print(f"run {report.run_id}: executed={report.executed} skipped={report.skipped} "
          f"failed={report.failed} registered={report.registered}")
    if not report.ok:
        for key, entry in sorted(report.tasks.items()):
            if entry["state"] not in ("DONE", "SKIPPED"):
                print(f"  FAILED {entry['rule_id']} [{key[:12]}]: "
                      f"{entry.get('diagnostics', '')}", file=sys.stderr)
        return RUN_FAILED_EXIT
    return 0


def cmd_query(args) -> int:
    ws = _workspace(args)
    text = args.dsl if args.dsl != "-" else sys.stdin.read()
    if args.natural:
        endpoint = ws.config.adapter_endpoint
        adapter = HttpAdapter(endpoint) if endpoint else None
        parsed = query_mod.translate_natural(text, adapter)
    else:
        parsed = query_mod.parse(text)
    result = query_mod.evaluate(parsed, ws.registry)
    if args.json:
        print(json.dumps(result.to_record(), indent=2, sort_keys=True))
    else:
        print(result.render_text())
    return 0


def cmd_trace(args) -> int:
    ws = _workspace(args)
    verb = "TRACE" if args.direction == "up" else "DEPENDENTS"
    result = query_mod.run(f"{verb} {args.ref}", ws.registry)
    print(result.render_text())
    return 0


def cmd_report(args) -> int:
    ws = _workspace(args)
    registry = ws.registry
    print(f"registry: {len(registry)} artifact(s) in {ws.registry_path}")
    for artifact_type in registry.types():
        print(f"  {artifact_type}: {len(registry.lookup(artifact_type=artifact_type))}")
    print(f"scopes: {len(registry.scopes())}")
    problems = registry.check_referential_closure()
    print(f"referential closure: {'ok' if not problems else f'{len(problems)} problem(s)'}")
    print(f"provenance acyclic: {'ok' if registry.check_acyclic() else 'CYCLE'}")
    if args.csv:
        registry.export_csv(args.csv)
        print(f"csv export: {args.csv}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve
    ws = _workspace(args)
    serve(ws, bind=args.bind, port=args.port, allow_remote=args.allow_remote,
          console_dir=args.console)
    return 0


def cmd_eval(args) -> int:
    scratch = Path(args.scratch) if args.scratch else Path(args.workspace) / "eval_scratch"
    report = run_trial(args.trial, scratch)
    out = Path(args.out) if args.out else scratch / "metrics_report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_record(), indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    print(json.dumps(report.to_record(), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="provwf",
        description="Provenance-first workflow engine: plan, approve, run, query.",
    )
    parser.add_argument("--version", action="version", version=f"provwf {__version__}")
    parser.add_argument("--workspace", default=".provwf", help="workspace directory")
    parser.add_argument("--dataset", default=None, help="dataset root override")
    parser.add_argument("--catalog", default=None, help="rule catalog directory override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="scan a dataset root and register ROOT artifacts")
    p.add_argument("root", nargs="?", default=None)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("plan", help="draft a plan from goal.toml (or '-' interactively)")
    p.add_argument("goal")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("approve", help="seal a draft plan")
    p.add_argument("plan_id")
    p.set_defaults(func=cmd_approve)

    p = sub.add_parser("run", help="execute an approved plan")
    p.add_argument("plan_id")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--runner", choices=("mock", "subprocess"), default="subprocess")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("query", help="evaluate a DSL query ('-' reads stdin)")
    p.add_argument("dsl")
    p.add_argument("--natural", action="store_true", help="translate via the language adapter")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("trace", help="trace provenance of an artifact reference")
    p.add_argument("ref")
    p.add_argument("--direction", choices=("up", "down"), default="up")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("report", help="registry summary and integrity checks")
    p.add_argument("--csv", default=None, help="also export a flat CSV mirror")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="start the loopback API service")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--bind", default="127.0.0.1")
    p.add_argument("--allow-remote", action="store_true")
    p.add_argument("--console", default=None, help="static console asset directory")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("eval", help="run a trial file and write metrics_report.json")
    p.add_argument("trial")
    p.add_argument("--scratch", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ProvwfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
