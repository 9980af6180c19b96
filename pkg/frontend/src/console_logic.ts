/**
 * Pure view logic shared by the panels: everything here is testable without
 * a DOM and keeps the rendering layer thin.
 */

import type { AgentReply, ClarificationRecord, RunView } from "./api.js";

/** Clicking an option sends exactly this text, so dialogs stay replayable. */
export function optionMessage(clarification: ClarificationRecord, option: string): string {
  return `${clarification.binding_target}=${option}`;
}

/** The approve button is enabled only when the API reports a clean draft. */
export function approveEnabled(reply: AgentReply | null): boolean {
  if (!reply || reply.status !== "plan") return false;
  return (reply.needs_confirmation ?? []).length === 0;
}

export interface CaretMessage {
  line: string;
  caret: string;
}

/** Build the two-line "query with caret at byte offset" error rendering. */
export function caretAt(query: string, message: string): CaretMessage {
  const match = /offset (\d+)/.exec(message);
  let column = match ? Number(match[1]) : 0;
  // offsets are bytes into UTF-8; map back to a character column
  const bytes = new TextEncoder().encode(query);
  if (column > bytes.length) column = bytes.length;
  const prefix = new TextDecoder().decode(bytes.slice(0, column));
  return { line: query, caret: " ".repeat(prefix.length) + "^" };
}

export type NodeStatus = "DONE" | "SKIPPED" | "FAILED" | "NOT_RUN" | "PENDING";

/** Map run-report task states onto node coloring, defaulting to not-run. */
export function nodeStatuses(taskKeys: string[], run: RunView | null): Map<string, NodeStatus> {
  const statuses = new Map<string, NodeStatus>();
  for (const key of taskKeys) {
    const reported = run?.report?.tasks?.[key]?.state;
    if (reported === "DONE" || reported === "SKIPPED" || reported === "FAILED") {
      statuses.set(key, reported);
    } else if (run && run.state !== "RUNNING") {
      statuses.set(key, "NOT_RUN");
    } else {
      statuses.set(key, "PENDING");
    }
  }
  return statuses;
}

/** Breadcrumb text for a provenance chain, upstream first. */
export function provenanceBreadcrumb(
  chain: { rule_id: string; artifact_type: string }[],
): string {
  if (!chain.length) return "(root artifact - no upstream steps)";
  const steps = [...chain].reverse().map((hop) => `${hop.rule_id} -> ${hop.artifact_type}`);
  return steps.join("  >  ");
}

/** One-line summary of a structured reply for the transcript pane. */
export function replySummary(reply: AgentReply): string {
  if (reply.status === "plan") {
    const rules = (reply.suggested_rules ?? []).join(", ");
    return `Plan ready (${reply.task_count ?? 0} task(s)): ${rules}`;
  }
  if (reply.status === "needs_confirmation") {
    const count = (reply.needs_confirmation ?? []).length;
    return `Needs confirmation: ${count} question(s)`;
  }
  if (reply.status === "query") {
    return formatAnswer(reply.result?.answer);
  }
  return reply.error ?? reply.summary ?? reply.status;
}

export function formatAnswer(answer: unknown): string {
  if (answer === null || answer === undefined) return "(no answer)";
  if (Array.isArray(answer)) return `${answer.length} record(s)`;
  if (typeof answer === "object") {
    const entries = Object.entries(answer as Record<string, unknown>);
    const trueCount = entries.filter(([, v]) => v === true).length;
    return `${trueCount}/${entries.length} scope(s) satisfied`;
  }
  return String(answer);
}
