"""Planning sessions: the dialog loop between a user and the assembler.

A message is routed down one of two pathways: query DSL goes to the grounded
query evaluator (flagged so it never counts toward planning iterations);
anything else is goal-bearing - a structured goal, free text for the keyword
interpreter, or an answer to an outstanding clarification. Replies are
structured (status, suggested rules, assumptions, needs-confirmation) so
dialogs are replayable and machine-countable.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass
from typing import Any

from . import query as query_mod
from .assembler import (
    AssemblyResult,
    Clarification,
    Configuration,
    Goal,
    assemble,
    approve,
    interpret_goal,
    render_plan,
)
from .contract import Registry
from .errors import (
    AdapterUnavailable,
    ApprovalError,
    InfeasibleGoal,
    NotFound,
    ProvwfError,
    QuerySyntaxError,
    TranslationFailed,
)
from .rules import Catalog


@dataclass
class Message:
    role: str  # user | agent
    text: str
    kind: str  # goal | clarification_answer | query | reply | error
    plan_ready: bool = False

    def to_record(self) -> dict[str, Any]:
        return {"role": self.role, "text": self.text, "kind": self.kind,
                "plan_ready": self.plan_ready}


def _parse_scalar(text: str) -> Any:
    raw = text.strip()
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    if raw in ("true", "false"):
        return raw == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


class PlanningSession:
    """One goal-refinement dialog with at most one draft plan at a time."""

    def __init__(self, registry: Registry, catalog: Catalog,
                 session_id: str | None = None, adapter=None, goal_adapter=None):
        self.session_id = session_id or f"sess-{uuid.uuid4().hex[:12]}"
        self.registry = registry
        self.catalog = catalog
        self.adapter = adapter  # NL -> query DSL
        self.goal_adapter = goal_adapter  # NL -> goal TOML
        self.transcript: list[Message] = []
        self.goal: Goal | None = None
        self.clarifications: list[Clarification] = []
        self.draft: Configuration | None = None
        self.approved: Configuration | None = None

    # -- metrics ------------------------------------------------------------

    @property
    def pl_count(self) -> int:
        """Planning iterations: user messages, query messages excluded."""
        return sum(1 for m in self.transcript if m.role == "user" and m.kind != "query")

    def transcript_records(self) -> list[dict[str, Any]]:
        return [m.to_record() for m in self.transcript]

    # -- dialog -------------------------------------------------------------

    def advance(self, text: str) -> dict[str, Any]:
        """Process one user message and return the structured agent reply."""
        text = text.strip()
        if query_mod.looks_like_dsl(text):
            return self._handle_query(text, kind="query")

        if self.clarifications and self._try_clarification_answer(text):
            self.transcript.append(Message("user", text, "clarification_answer"))
            reply = self._plan()
        elif self.adapter is not None and self._adapter_query(text):
            # adapter translated free text into DSL; grounded path answers
            return self._handle_query(text, kind="query", translated=True)
        else:
            self.transcript.append(Message("user", text, "goal"))
            reply = self._interpret(text)

        self.transcript.append(Message(
            "agent", reply.get("summary", reply["status"]), "reply",
            plan_ready=reply["status"] == "plan",
        ))
        return reply

    def _adapter_query(self, text: str) -> bool:
        if query_mod.looks_like_dsl(text) or "target_type" in text:
            return False
        try:
            self.adapter.translate(text)
            return True
        except (AdapterUnavailable, TranslationFailed):
            return False

    def _handle_query(self, text: str, kind: str, translated: bool = False) -> dict[str, Any]:
        self.transcript.append(Message("user", text, kind))
        try:
            if translated:
                parsed = query_mod.translate_natural(text, self.adapter)
            else:
                parsed = query_mod.parse(text)
            result = query_mod.evaluate(parsed, self.registry)
            reply = {"status": "query", "result": result.to_record(),
                     "summary": result.render_text()}
        except (QuerySyntaxError, NotFound, AdapterUnavailable, TranslationFailed) as exc:
            reply = {"status": "error", "error": str(exc), "summary": str(exc)}
        self.transcript.append(Message("agent", reply["summary"], "reply"))
        return reply

    def _try_clarification_answer(self, text: str) -> bool:
        """Bind answers like "all", "1. all", or "fanout.convert.raw=all"."""
        if self.goal is None:
            return False
        import re
        bound = False
        for part in (p.strip() for p in text.split(";")):
            if not part:
                continue
            body = part
            indexed = re.match(r"^(\d+)\.\s+(.+)$", body)
            if indexed:
                index = int(indexed.group(1)) - 1
                if 0 <= index < len(self.clarifications):
                    target = self.clarifications[index].binding_target
                    self.goal = self.goal.with_directive(target, _parse_scalar(indexed.group(2)))
                    bound = True
                    continue
            if "=" in body:
                key, _, value = body.partition("=")
                key = key.strip()
                for c in self.clarifications:
                    if c.binding_target == key or c.question_id == key:
                        self.goal = self.goal.with_directive(c.binding_target, _parse_scalar(value))
                        bound = True
                        break
                else:
                    if key.split(".")[0] in ("param", "fanout", "producer"):
                        self.goal = self.goal.with_directive(key, _parse_scalar(value))
                        bound = True
                continue
            token = _parse_scalar(body)
            for c in self.clarifications:
                if isinstance(token, str) and token in c.options:
                    self.goal = self.goal.with_directive(c.binding_target, token)
                    bound = True
                    break
        return bound

    def _interpret(self, text: str) -> dict[str, Any]:
        try:
            outcome = interpret_goal(text, self.registry, self.catalog,
                                     goal_adapter=self.goal_adapter)
        except InfeasibleGoal as exc:
            self.clarifications = []
            return {"status": "error", "error": str(exc),
                    "summary": f"Cannot plan: {exc}"}
        except ProvwfError as exc:
            return {"status": "error", "error": str(exc), "summary": str(exc)}
        if isinstance(outcome, Goal):
            self.goal = outcome
        else:
            # interpret_goal validated the goal but found ambiguity; keep the
            # bare goal so directives from answers can attach to it
            parsed = interpret_probe_goal(text, self.registry, self.catalog, self.goal_adapter)
            self.goal = parsed
        return self._plan()

    def _plan(self) -> dict[str, Any]:
        assert self.goal is not None
        try:
            result: AssemblyResult = assemble(self.goal, self.registry, self.catalog)
        except ProvwfError as exc:
            return {"status": "error", "error": str(exc), "summary": str(exc)}
        if result.needs_clarification:
            self.clarifications = list(result.clarifications)
            self.draft = None
            questions = [c.to_record() for c in self.clarifications]
            lines = [f"Suggested rules: {', '.join(result.suggested_rule_ids) or '(none yet)'}"]
            if result.assumptions:
                lines.append("Assumptions made: " + "; ".join(result.assumptions))
            lines.append("Needs confirmation:")
            for i, c in enumerate(self.clarifications, 1):
                lines.append(f"  {i}. {c.question} Options: {', '.join(c.options)}")
            return {
                "status": "needs_confirmation",
                "suggested_rules": result.suggested_rule_ids,
                "assumptions": result.assumptions,
                "needs_confirmation": questions,
                "summary": "\n".join(lines),
            }
        self.clarifications = []
        self.draft = result.config
        summary = render_plan(result.config)
        return {
            "status": "plan",
            "suggested_rules": result.suggested_rule_ids,
            "assumptions": result.assumptions,
            "needs_confirmation": [],
            "plan_fingerprint": result.config.fingerprint,
            "task_count": len(result.config.instances),
            "summary": summary,
        }

    # -- approval -------------------------------------------------------------

    def approve(self) -> Configuration:
        if self.clarifications:
            open_ids = ", ".join(c.question_id for c in self.clarifications)
            raise ApprovalError(f"clarifications outstanding: {open_ids}")
        if self.draft is None:
            raise ApprovalError("no draft plan to approve")
        self.approved = approve(self.draft)
        self.transcript.append(Message("agent", "Plan approved and sealed.", "reply",
                                       plan_ready=True))
        return self.approved


def interpret_probe_goal(text: str, registry: Registry, catalog: Catalog, goal_adapter):
    """Best-effort Goal object for a request whose planning is still ambiguous."""
    from .assembler import keyword_goal, parse_goal_toml
    if "target_type" in text and "=" in text:
        return parse_goal_toml(text, catalog, registry)
    if goal_adapter is not None:
        try:
            return parse_goal_toml(goal_adapter.translate(text), catalog, registry)
        except ProvwfError:
            pass
    goal = keyword_goal(text, catalog)
    if goal is None:
        raise InfeasibleGoal("", "could not interpret the request as a goal")
    return goal


def replay_dialog(session: PlanningSession, lines: list[str]) -> dict[str, Any]:
    """Feed scripted user messages; returns the last reply."""
    reply: dict[str, Any] = {"status": "empty"}
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        reply = session.advance(line)
    return reply


def count_pl(transcript: list[dict[str, Any]]) -> int:
    """Planning iterations from a transcript: user messages (query messages
    excluded) up to and including the one that yields an approvable plan."""
    from .errors import Unfinished
    count = 0
    for message in transcript:
        if message.get("role") == "user" and message.get("kind") != "query":
            count += 1
        if message.get("role") == "agent" and message.get("plan_ready"):
            if count == 0:
                raise Unfinished("plan appeared before any user message")
            return count
    raise Unfinished("transcript never reached an approvable plan")
