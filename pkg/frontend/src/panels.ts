/**
 * DOM rendering for the four panels: dialog, plan, DAG, and query/artifacts.
 * All state comes from the API; these functions only draw it.
 */

import type {
  AgentReply,
  ArtifactRecord,
  DagPayload,
  QueryResultRecord,
  RunView,
} from "./api.js";
import { layoutDag, NODE_H, NODE_W } from "./dag_layout.js";
import {
  caretAt,
  formatAnswer,
  NodeStatus,
  nodeStatuses,
  provenanceBreadcrumb,
} from "./console_logic.js";

const SVG_NS = "http://www.w3.org/2000/svg";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderTranscript(
  container: HTMLElement,
  transcript: { role: string; text: string; kind: string }[],
): void {
  container.replaceChildren();
  for (const message of transcript) {
    const bubble = el("div", `msg msg-${message.role}`);
    bubble.appendChild(el("div", "msg-role", message.role === "user" ? "you" : "agent"));
    const body = el("pre", "msg-text");
    body.textContent = message.text;
    bubble.appendChild(body);
    container.appendChild(bubble);
  }
  container.scrollTop = container.scrollHeight;
}

export function renderClarifications(
  container: HTMLElement,
  reply: AgentReply | null,
  onPick: (message: string) => void,
): void {
  container.replaceChildren();
  const clarifications = reply?.needs_confirmation ?? [];
  if (!clarifications.length) return;
  clarifications.forEach((clar, index) => {
    const card = el("div", "clarification");
    card.appendChild(el("div", "clar-q", `${index + 1}. ${clar.question}`));
    const options = el("div", "clar-options");
    for (const option of clar.options) {
      const button = el("button", "option-btn", option);
      // the click sends the exact binding text, so dialogs are replayable
      button.addEventListener("click", () =>
        onPick(`${clar.binding_target}=${option}`));
      options.appendChild(button);
    }
    card.appendChild(options);
    container.appendChild(card);
  });
}

export function renderPlanSummary(container: HTMLElement, reply: AgentReply | null): void {
  container.replaceChildren();
  if (!reply || (reply.status !== "plan" && reply.status !== "needs_confirmation")) {
    container.appendChild(el("p", "muted", "No draft plan yet."));
    return;
  }
  const rules = reply.suggested_rules ?? [];
  container.appendChild(el("h3", undefined, "Suggested rules"));
  const list = el("ul", "rule-list");
  for (const rule of rules) list.appendChild(el("li", undefined, rule));
  if (!rules.length) list.appendChild(el("li", "muted", "(already satisfied)"));
  container.appendChild(list);

  const assumptions = reply.assumptions ?? [];
  if (assumptions.length) {
    container.appendChild(el("h3", undefined, "Assumptions made"));
    const al = el("ul", "assumption-list");
    for (const assumption of assumptions) al.appendChild(el("li", undefined, assumption));
    container.appendChild(al);
  }
  const pending = reply.needs_confirmation ?? [];
  if (pending.length) {
    container.appendChild(el("h3", undefined, "Needs confirmation"));
    const pl = el("ul", "pending-list");
    for (const clar of pending) pl.appendChild(el("li", undefined, clar.question));
    container.appendChild(pl);
  }
  if (reply.plan_fingerprint) {
    container.appendChild(el("p", "fingerprint", `fingerprint ${reply.plan_fingerprint}`));
  }
}

const STATUS_CLASS: Record<NodeStatus, string> = {
  DONE: "node-done",
  SKIPPED: "node-skipped",
  FAILED: "node-failed",
  NOT_RUN: "node-notrun",
  PENDING: "node-pending",
};

export function renderDag(
  container: HTMLElement,
  payload: DagPayload | null,
  run: RunView | null,
): { nodes: number; edges: number } {
  container.replaceChildren();
  if (!payload || payload.nodes.length === 0) {
    container.appendChild(el("p", "muted", "Plan already satisfied - nothing to execute."));
    return { nodes: 0, edges: 0 };
  }
  const layout = layoutDag(payload);
  const statuses = nodeStatuses(payload.nodes.map((n) => n.task_key), run);
  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", `-10 -10 ${layout.width + 20} ${layout.height + 20}`);
  svg.setAttribute("class", "dag-svg");
  for (const edge of layout.edges) {
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(edge.x1));
    line.setAttribute("y1", String(edge.y1));
    line.setAttribute("x2", String(edge.x2));
    line.setAttribute("y2", String(edge.y2));
    line.setAttribute("class", "dag-edge");
    const title = document.createElementNS(SVG_NS, "title");
    title.textContent = edge.slot;
    line.appendChild(title);
    svg.appendChild(line);
  }
  for (const node of layout.nodes) {
    const group = document.createElementNS(SVG_NS, "g");
    const status = statuses.get(node.taskKey) ?? "PENDING";
    const rect = document.createElementNS(SVG_NS, "rect");
    rect.setAttribute("x", String(node.x));
    rect.setAttribute("y", String(node.y));
    rect.setAttribute("width", String(NODE_W));
    rect.setAttribute("height", String(NODE_H));
    rect.setAttribute("rx", "6");
    rect.setAttribute("class", `dag-node ${STATUS_CLASS[status]}`);
    group.appendChild(rect);
    const label = document.createElementNS(SVG_NS, "text");
    label.setAttribute("x", String(node.x + NODE_W / 2));
    label.setAttribute("y", String(node.y + 18));
    label.setAttribute("class", "dag-label");
    label.textContent = node.label;
    group.appendChild(label);
    const scope = document.createElementNS(SVG_NS, "text");
    scope.setAttribute("x", String(node.x + NODE_W / 2));
    scope.setAttribute("y", String(node.y + 34));
    scope.setAttribute("class", "dag-scope");
    scope.textContent = node.scopeLabel;
    group.appendChild(scope);
    const tip = document.createElementNS(SVG_NS, "title");
    tip.textContent = `${node.label} [${status}]\n${node.taskKey}`;
    group.appendChild(tip);
    svg.appendChild(group);
  }
  container.appendChild(svg);

  const legend = el("div", "legend");
  for (const status of ["DONE", "SKIPPED", "FAILED", "NOT_RUN"] as NodeStatus[]) {
    const item = el("span", "legend-item");
    item.appendChild(el("span", `legend-swatch ${STATUS_CLASS[status]}`));
    item.appendChild(el("span", undefined, status.toLowerCase().replace("_", " ")));
    legend.appendChild(item);
  }
  container.appendChild(legend);
  return { nodes: layout.nodes.length, edges: layout.edges.length };
}

export function renderQueryResult(
  container: HTMLElement,
  dsl: string,
  result: QueryResultRecord | null,
  error: string | null,
  onArtifact: (id: string) => void,
): void {
  container.replaceChildren();
  if (error !== null) {
    const { line, caret } = caretAt(dsl, error);
    const pre = el("pre", "query-error");
    pre.textContent = `${line}\n${caret}\n${error}`;
    container.appendChild(pre);
    return;
  }
  if (!result) return;
  container.appendChild(el("div", "answer", formatAnswer(result.answer)));
  if (result.unknown_count > 0) {
    container.appendChild(el(
      "div", "unknown-banner",
      `${result.unknown_count} record(s) could not be evaluated (missing attributes)`,
    ));
  }
  if (Array.isArray(result.answer) || result.supporting_ids.length) {
    const list = el("div", "supporting");
    list.appendChild(el("h4", undefined, `supporting artifacts (${result.supporting_ids.length})`));
    for (const id of result.supporting_ids.slice(0, 200)) {
      const link = el("a", "artifact-link", id.slice(0, 16) + "…");
      link.setAttribute("href", "#artifact-" + id);
      link.addEventListener("click", (event) => {
        event.preventDefault();
        onArtifact(id);
      });
      list.appendChild(link);
    }
    container.appendChild(list);
  }
  if (typeof result.answer === "object" && result.answer && !Array.isArray(result.answer)) {
    const table = el("table", "status-table");
    for (const [scope, value] of Object.entries(result.answer as Record<string, unknown>)) {
      const row = el("tr");
      row.appendChild(el("td", undefined, scope));
      row.appendChild(el("td", value ? "yes" : "no", value ? "yes" : "no"));
      table.appendChild(row);
    }
    container.appendChild(table);
  }
  container.appendChild(el("div", "grounding", result.grounding));
}

export function renderArtifactDetail(
  container: HTMLElement,
  artifact: ArtifactRecord | null,
  chain: { rule_id: string; artifact_type: string }[] | null,
): void {
  container.replaceChildren();
  if (!artifact) {
    container.appendChild(el("p", "muted", "Select an artifact to inspect its record."));
    return;
  }
  container.appendChild(el("h3", undefined, `${artifact.artifact_type} · ${artifact.logical_name}`));
  const scope = artifact.scope.session
    ? `${artifact.scope.subject}/${artifact.scope.session}`
    : artifact.scope.subject || "dataset";
  container.appendChild(el("div", "muted", `scope ${scope} · id ${artifact.id.slice(0, 20)}…`));
  const table = el("table", "attr-table");
  for (const [key, value] of Object.entries(artifact.attributes)) {
    const row = el("tr");
    row.appendChild(el("td", undefined, key));
    row.appendChild(el("td", undefined, value === null ? "MISSING" : String(value)));
    table.appendChild(row);
  }
  container.appendChild(table);
  if (chain) {
    container.appendChild(el("h4", undefined, "provenance"));
    container.appendChild(el("div", "breadcrumb", provenanceBreadcrumb(chain)));
  }
}
