"""Loopback-only REST service for planning dialogs, runs, and queries.

Everything the console needs is exposed under /v1 over plain JSON. The
listener refuses non-loopback bind addresses unless explicitly overridden,
because the whole system is meant to run next to the data it governs.
"""

from __future__ import annotations

import json
import re
import threading
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Callable

from . import query as query_mod
from .assembler import APPROVED
from .errors import (
    AdapterUnavailable,
    ApprovalError,
    ContractViolation,
    InfeasibleGoal,
    IoError,
    NotFound,
    ProvwfError,
    QuerySyntaxError,
    TranslationFailed,
    Unavailable,
)
from .executor import MockRunner, SubprocessRunner, build_dag, canonicalize_dag, execute
from .query import HttpAdapter
from .session import PlanningSession
from .workspace import Workspace

LOOPBACK_ADDRESSES = ("127.0.0.1", "::1", "localhost")

_ERROR_CODES = {
    NotFound: ("not_found", 404),
    ApprovalError: ("approval_required", 409),
    InfeasibleGoal: ("infeasible_goal", 422),
    QuerySyntaxError: ("query_syntax", 422),
    TranslationFailed: ("translation_failed", 422),
    AdapterUnavailable: ("adapter_unavailable", 503),
    Unavailable: ("unavailable", 422),
    ContractViolation: ("contract_violation", 422),
    IoError: ("io_error", 409),
}


def api_error(exc: Exception) -> tuple[dict[str, Any], int]:
    for klass, (code, status) in _ERROR_CODES.items():
        if isinstance(exc, klass):
            return {"error": {"code": code, "message": str(exc)}}, status
    return {"error": {"code": "internal", "message": str(exc)}}, 500


class ServiceState:
    """Shared state behind the handlers: workspace, sessions, runs."""

    def __init__(self, workspace: Workspace):
        self.workspace = workspace
        self.sessions: dict[str, PlanningSession] = {}
        self.runs: dict[str, dict[str, Any]] = {}
        self.lock = threading.Lock()

    def adapter(self):
        endpoint = self.workspace.config.adapter_endpoint
        return HttpAdapter(endpoint) if endpoint else None

    # -- session endpoints -------------------------------------------------

    def create_session(self, body: dict) -> dict:
        session = PlanningSession(
            self.workspace.registry, self.workspace.catalog, adapter=self.adapter()
        )
        with self.lock:
            self.sessions[session.session_id] = session
        return {"session_id": session.session_id}

    def get_session(self, session_id: str) -> PlanningSession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise NotFound(f"no session '{session_id}'") from None

    def post_message(self, session_id: str, body: dict) -> dict:
        text = body.get("text", "")
        if not isinstance(text, str) or not text.strip():
            raise InfeasibleGoal("", "message text is empty")
        session = self.get_session(session_id)
        reply = session.advance(text)
        reply["session_id"] = session_id
        reply["pl_count"] = session.pl_count
        reply["transcript_length"] = len(session.transcript)
        return reply

    def approve_session(self, session_id: str, body: dict) -> dict:
        session = self.get_session(session_id)
        sealed = session.approve()
        plan_id = self.workspace.save_plan(sealed)
        return {"plan_id": plan_id, "fingerprint": sealed.fingerprint, "seal": sealed.seal}

    def session_view(self, session_id: str) -> dict:
        session = self.get_session(session_id)
        return {
            "session_id": session_id,
            "transcript": session.transcript_records(),
            "clarifications": [c.to_record() for c in session.clarifications],
            "pl_count": session.pl_count,
            "draft_fingerprint": session.draft.fingerprint if session.draft else None,
            "approved_fingerprint": session.approved.fingerprint if session.approved else None,
        }

    # -- plan / dag endpoints --------------------------------------------------

    def get_dag(self, plan_id: str) -> bytes:
        config = self.workspace.load_plan(plan_id)
        dag = build_dag(config, self.workspace.registry, self.workspace.catalog,
                        require_approved=False)
        return canonicalize_dag(dag)

    def list_plans(self) -> dict:
        return {"plans": self.workspace.list_plans()}

    # -- run endpoints ------------------------------------------------------------

    def start_run(self, body: dict) -> dict:
        plan_id = body.get("plan_id", "")
        workers = int(body.get("workers", 1))
        runner_name = body.get("runner", "mock")
        config = self.workspace.load_plan(plan_id)
        if config.seal != APPROVED:
            raise ApprovalError(f"plan '{plan_id}' is not approved; execution refused")
        runner = MockRunner() if runner_name == "mock" else SubprocessRunner()
        run_id = f"run-{uuid.uuid4().hex[:12]}"
        with self.lock:
            self.runs[run_id] = {"state": "RUNNING", "plan_id": plan_id}

        def worker():
            try:
                with self.workspace.run_lock():
                    dag = build_dag(config, self.workspace.registry, self.workspace.catalog)
                    report = execute(dag, runner, self.workspace.registry,
                                     self.workspace.run_paths(), workers=workers, run_id=run_id)
                with self.lock:
                    self.runs[run_id] = {
                        "state": "DONE" if report.ok else "FAILED",
                        "plan_id": plan_id,
                        "report": report.to_record(),
                    }
            except Exception as exc:  # surfaced to the client via polling
                with self.lock:
                    self.runs[run_id] = {"state": "ERROR", "plan_id": plan_id, "error": str(exc)}

        threading.Thread(target=worker, daemon=True).start()
        return {"run_id": run_id}

    def get_run(self, run_id: str) -> dict:
        with self.lock:
            run = self.runs.get(run_id)
        if run is None:
            raise NotFound(f"no run '{run_id}'")
        return {"run_id": run_id, **run}

    # -- artifact / query endpoints ---------------------------------------------------

    def list_artifacts(self, params: dict[str, str]) -> dict:
        registry = self.workspace.registry
        records = registry.lookup(
            artifact_type=params.get("type"),
            subject=params.get("subject"),
            session=params.get("session"),
            logical_name=params.get("name"),
        )
        return {"artifacts": [a.record() for a in records], "count": len(records)}

    def post_query(self, body: dict) -> dict:
        dsl = body.get("dsl", "")
        natural = body.get("text", "")
        if dsl:
            parsed = query_mod.parse(dsl)
        elif natural:
            parsed = query_mod.translate_natural(natural, self.adapter())
        else:
            raise QuerySyntaxError(0, ["dsl or text field"], "empty body")
        result = query_mod.evaluate(parsed, self.workspace.registry)
        return {"result": result.to_record(), "rendered": result.render_text()}

    def get_provenance(self, art_id: str) -> dict:
        backend = query_mod.RegistryBackend(self.workspace.registry)
        resolved = backend.resolve_ref(query_mod.ArtifactRef(art_id=art_id))
        return {
            "artifact_id": resolved,
            "chain": backend.trace_up(resolved),
            "producer": backend.producers(resolved),
        }


class _Handler(BaseHTTPRequestHandler):
    state: ServiceState = None  # injected by make_server
    console_dir: Path | None = None
    protocol_version = "HTTP/1.1"

    # silence default stderr access log
    def log_message(self, fmt, *args):
        pass

    def _send(self, payload: bytes, status: int = 200,
              content_type: str = "application/json") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.end_headers()
        self.wfile.write(payload)

    def _send_json(self, obj: Any, status: int = 200) -> None:
        self._send(json.dumps(obj).encode("utf-8"), status)

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if not length:
            return {}
        raw = self.rfile.read(length)
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            return {}
        return doc if isinstance(doc, dict) else {}

    def do_OPTIONS(self):
        self._send(b"", 204)

    def do_GET(self):
        self._route("GET")

    def do_POST(self):
        self._route("POST")

    _ROUTES: list[tuple[str, str, Callable]] = []

    def _route(self, method: str) -> None:
        path, _, query_string = self.path.partition("?")
        params = {}
        for pair in query_string.split("&"):
            if "=" in pair:
                k, _, v = pair.partition("=")
                params[k] = v
        try:
            payload = self._dispatch(method, path, params)
        except ProvwfError as exc:
            body, status = api_error(exc)
            self._send_json(body, status)
        except Exception as exc:  # pragma: no cover - defensive
            body, status = api_error(exc)
            self._send_json(body, status)
        else:
            if payload is not None:
                self._send_json(payload)

    def _dispatch(self, method: str, path: str, params: dict) -> Any:
        state = self.state
        m = re.fullmatch(r"/v1/sessions", path)
        if m and method == "POST":
            return state.create_session(self._body())
        m = re.fullmatch(r"/v1/sessions/([^/]+)", path)
        if m and method == "GET":
            return state.session_view(m.group(1))
        m = re.fullmatch(r"/v1/sessions/([^/]+)/message", path)
        if m and method == "POST":
            return state.post_message(m.group(1), self._body())
        m = re.fullmatch(r"/v1/sessions/([^/]+)/approve", path)
        if m and method == "POST":
            return state.approve_session(m.group(1), self._body())
        m = re.fullmatch(r"/v1/plans", path)
        if m and method == "GET":
            return state.list_plans()
        m = re.fullmatch(r"/v1/dag/([^/]+)", path)
        if m and method == "GET":
            self._send(state.get_dag(m.group(1)))
            return None
        m = re.fullmatch(r"/v1/runs", path)
        if m and method == "POST":
            return state.start_run(self._body())
        m = re.fullmatch(r"/v1/runs/([^/]+)", path)
        if m and method == "GET":
            return state.get_run(m.group(1))
        m = re.fullmatch(r"/v1/artifacts", path)
        if m and method == "GET":
            return state.list_artifacts(params)
        m = re.fullmatch(r"/v1/artifacts/([^/]+)/provenance", path)
        if m and method == "GET":
            return state.get_provenance(m.group(1))
        m = re.fullmatch(r"/v1/query", path)
        if m and method == "POST":
            return state.post_query(self._body())
        if method == "GET" and self.console_dir is not None:
            return self._serve_static(path)
        raise NotFound(f"no endpoint {method} {path}")

    def _serve_static(self, path: str) -> None:
        rel = path.lstrip("/") or "index.html"
        target = (self.console_dir / rel).resolve()
        if not str(target).startswith(str(self.console_dir.resolve())) or not target.is_file():
            raise NotFound(f"no endpoint GET /{rel}")
        types = {".html": "text/html", ".js": "text/javascript", ".css": "text/css",
                 ".map": "application/json", ".svg": "image/svg+xml"}
        self._send(target.read_bytes(), content_type=types.get(target.suffix, "application/octet-stream"))
        return None


def make_server(workspace: Workspace, bind: str = "127.0.0.1", port: int = 0,
                allow_remote: bool = False, console_dir: str | Path | None = None) -> ThreadingHTTPServer:
    """Build (but do not start) the HTTP server; refuses non-loopback binds."""
    if bind not in LOOPBACK_ADDRESSES and not allow_remote:
        raise IoError(
            f"refusing to bind non-loopback address {bind!r}; "
            "pass --allow-remote to override"
        )
    state = ServiceState(workspace)
    handler = type("BoundHandler", (_Handler,), {
        "state": state,
        "console_dir": Path(console_dir) if console_dir else None,
    })
    server = ThreadingHTTPServer((bind, port), handler)
    server.provwf_state = state
    return server


def serve(workspace: Workspace, bind: str = "127.0.0.1", port: int | None = None,
          allow_remote: bool = False, console_dir: str | Path | None = None) -> None:
    """Run the service until interrupted."""
    resolved_port = port if port is not None else workspace.config.port
    console = console_dir or workspace.config.console_dir or None
    server = make_server(workspace, bind=bind, port=resolved_port,
                         allow_remote=allow_remote, console_dir=console)
    host, actual_port = server.server_address[:2]
    print(f"provwf service listening on http://{host}:{actual_port}/v1", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
