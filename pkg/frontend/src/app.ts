/**
 * Console wiring: one planning session per page, panels fed exclusively by
 * the loopback API. Reopening the page against the same service rebuilds
 * every view from API data alone.
 */

import { ApiError, DagPayload, ProvwfClient, AgentReply, RunView } from "./api.js";
import { approveEnabled, replySummary } from "./console_logic.js";
import {
  renderArtifactDetail,
  renderClarifications,
  renderDag,
  renderPlanSummary,
  renderQueryResult,
  renderTranscript,
} from "./panels.js";

const client = new ProvwfClient("/v1");

const $ = (id: string): HTMLElement => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
};

let sessionId: string | null = null;
let lastReply: AgentReply | null = null;
let planId: string | null = null;
let lastRun: RunView | null = null;
let dagPayload: DagPayload | null = null;
let pollTimer: number | null = null;

function setBanner(text: string | null): void {
  const banner = $("banner");
  banner.textContent = text ?? "";
  banner.classList.toggle("hidden", text === null);
  ($("message-input") as HTMLInputElement).disabled = text !== null;
  ($("send-btn") as HTMLButtonElement).disabled = text !== null;
}

async function refreshTranscript(): Promise<void> {
  if (!sessionId) return;
  const view = await client.getSession(sessionId);
  renderTranscript($("transcript"), view.transcript);
  $("pl-counter").textContent = `planning iterations: ${view.pl_count}`;
}

function refreshApprove(): void {
  ($("approve-btn") as HTMLButtonElement).disabled = !approveEnabled(lastReply);
}

async function handleReply(reply: AgentReply): Promise<void> {
  lastReply = reply;
  renderClarifications($("clarifications"), reply, (message) => void send(message));
  renderPlanSummary($("plan-summary"), reply);
  refreshApprove();
  await refreshTranscript();
  $("reply-line").textContent = replySummary(reply);
}

async function send(text: string): Promise<void> {
  if (!text.trim()) return;
  try {
    setBanner(null);
    if (!sessionId) {
      sessionId = (await client.createSession()).session_id;
      $("session-label").textContent = sessionId;
    }
    const reply = await client.sendMessage(sessionId, text);
    await handleReply(reply);
  } catch (error) {
    if (error instanceof ApiError) {
      $("reply-line").textContent = `${error.code}: ${error.message}`;
    } else {
      setBanner("API unreachable - is `provwf serve` running?");
    }
  }
}

async function approve(): Promise<void> {
  if (!sessionId) return;
  try {
    const sealed = await client.approve(sessionId);
    planId = sealed.plan_id;
    $("plan-label").textContent = `plan ${sealed.plan_id} (sealed ${sealed.fingerprint.slice(0, 16)}…)`;
    ($("run-btn") as HTMLButtonElement).disabled = false;
    dagPayload = await client.getDag(planId);
    redrawDag();
  } catch (error) {
    $("reply-line").textContent = error instanceof ApiError
      ? `${error.code}: ${error.message}` : String(error);
  }
}

function redrawDag(): void {
  const counts = renderDag($("dag"), dagPayload, lastRun);
  $("dag-counts").textContent = dagPayload
    ? `${counts.nodes} node(s), ${counts.edges} edge(s)` : "";
}

async function startRun(): Promise<void> {
  if (!planId) return;
  const workers = Number(($("workers-input") as HTMLInputElement).value) || 1;
  try {
    const { run_id } = await client.startRun(planId, "subprocess", workers);
    pollRun(run_id);
  } catch (error) {
    $("run-state").textContent = error instanceof ApiError
      ? `${error.code}: ${error.message}` : String(error);
  }
}

function pollRun(runId: string): void {
  if (pollTimer !== null) window.clearInterval(pollTimer);
  pollTimer = window.setInterval(async () => {
    try {
      lastRun = await client.getRun(runId);
      const counts = lastRun.report?.counts;
      $("run-state").textContent = counts
        ? `${lastRun.state} - executed ${counts.executed}, skipped ${counts.skipped}, failed ${counts.failed}`
        : lastRun.state;
      redrawDag();
      if (lastRun.state !== "RUNNING" && pollTimer !== null) {
        window.clearInterval(pollTimer);
        pollTimer = null;
      }
    } catch {
      // keep polling; transient errors surface once the run endpoint settles
    }
  }, 300);
}

async function runQuery(): Promise<void> {
  const dsl = ($("query-input") as HTMLInputElement).value;
  try {
    const { result } = await client.query(dsl);
    renderQueryResult($("query-result"), dsl, result, null, (id) => void showArtifact(id));
  } catch (error) {
    const message = error instanceof ApiError ? error.message : String(error);
    renderQueryResult($("query-result"), dsl, null, message, () => undefined);
  }
}

async function showArtifact(id: string): Promise<void> {
  try {
    const { artifacts } = await client.listArtifacts({});
    const artifact = artifacts.find((a) => a.id === id) ?? null;
    let chain = null;
    if (artifact) {
      chain = (await client.provenance(id)).chain;
    }
    renderArtifactDetail($("artifact-detail"), artifact, chain);
  } catch (error) {
    $("artifact-detail").textContent = String(error);
  }
}

function wire(): void {
  const input = $("message-input") as HTMLInputElement;
  $("send-btn").addEventListener("click", () => {
    void send(input.value);
    input.value = "";
  });
  input.addEventListener("keydown", (event) => {
    if (event.key === "Enter") {
      void send(input.value);
      input.value = "";
    }
  });
  $("approve-btn").addEventListener("click", () => void approve());
  $("run-btn").addEventListener("click", () => void startRun());
  $("query-btn").addEventListener("click", () => void runQuery());
  ($("query-input") as HTMLInputElement).addEventListener("keydown", (event) => {
    if (event.key === "Enter") void runQuery();
  });
  renderPlanSummary($("plan-summary"), null);
  renderArtifactDetail($("artifact-detail"), null, null);
  refreshApprove();
  // liveness probe: disable input until the service answers
  client.listPlans().then(
    () => setBanner(null),
    () => setBanner("API unreachable - is `provwf serve` running?"),
  );
}

wire();
