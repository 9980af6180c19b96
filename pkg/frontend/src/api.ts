/**
 * Typed client for the provwf loopback API (/v1).
 *
 * The console holds no authoritative state: every view is rebuilt from
 * these endpoints, and no payload file contents are ever fetched - only
 * registry fields.
 */

export interface ClarificationRecord {
  question_id: string;
  question: string;
  options: string[];
  binding_target: string;
}

export interface AgentReply {
  status: "plan" | "needs_confirmation" | "query" | "error" | string;
  suggested_rules?: string[];
  assumptions?: string[];
  needs_confirmation?: ClarificationRecord[];
  plan_fingerprint?: string;
  task_count?: number;
  summary?: string;
  result?: QueryResultRecord;
  error?: string;
  pl_count?: number;
  session_id?: string;
}

export interface QueryResultRecord {
  answer: unknown;
  supporting_ids: string[];
  unknown_count: number;
  grounding: string;
}

export interface DagNode {
  task_key: string;
  rule_id: string;
  scope: { subject: string; session: string };
  inputs: Record<string, string[]>;
  params: Record<string, unknown>;
  outputs: { name: string; type: string }[];
}

export interface DagPayload {
  config_fingerprint: string;
  nodes: DagNode[];
  edges: [string, string, string][];
}

export interface RunView {
  run_id: string;
  state: "RUNNING" | "DONE" | "FAILED" | "ERROR" | string;
  plan_id?: string;
  report?: {
    counts: { executed: number; skipped: number; failed: number };
    registered: number;
    tasks: Record<string, { state: string; rule_id: string; diagnostics?: string }>;
  };
  error?: string;
}

export interface ArtifactRecord {
  id: string;
  artifact_type: string;
  logical_name: string;
  scope: { subject: string; session: string };
  attributes: Record<string, unknown>;
  provenance: Record<string, unknown>;
  content_hash: string;
  payload_path: string;
}

export interface SessionView {
  session_id: string;
  transcript: { role: string; text: string; kind: string; plan_ready: boolean }[];
  clarifications: ClarificationRecord[];
  pl_count: number;
  draft_fingerprint: string | null;
  approved_fingerprint: string | null;
}

export class ApiError extends Error {
  constructor(
    public code: string,
    message: string,
    public status: number,
  ) {
    super(message);
  }
}

export class ProvwfClient {
  constructor(private base: string = "/v1") {}

  private async call<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(this.base + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await resp.text();
    let doc: any = null;
    try {
      doc = text ? JSON.parse(text) : null;
    } catch {
      doc = null;
    }
    if (!resp.ok) {
      const err = doc?.error ?? { code: "http_" + resp.status, message: text };
      throw new ApiError(err.code, err.message, resp.status);
    }
    return doc as T;
  }

  createSession(): Promise<{ session_id: string }> {
    return this.call("POST", "/sessions", {});
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.call("GET", `/sessions/${sessionId}`);
  }

  sendMessage(sessionId: string, text: string): Promise<AgentReply> {
    return this.call("POST", `/sessions/${sessionId}/message`, { text });
  }

  approve(sessionId: string): Promise<{ plan_id: string; fingerprint: string; seal: string }> {
    return this.call("POST", `/sessions/${sessionId}/approve`, {});
  }

  listPlans(): Promise<{ plans: { plan_id: string; seal: string; target_type: string; tasks: string }[] }> {
    return this.call("GET", "/plans");
  }

  getDag(planId: string): Promise<DagPayload> {
    return this.call("GET", `/dag/${planId}`);
  }

  startRun(planId: string, runner: string = "mock", workers: number = 1): Promise<{ run_id: string }> {
    return this.call("POST", "/runs", { plan_id: planId, runner, workers });
  }

  getRun(runId: string): Promise<RunView> {
    return this.call("GET", `/runs/${runId}`);
  }

  query(dsl: string): Promise<{ result: QueryResultRecord; rendered: string }> {
    return this.call("POST", "/query", { dsl });
  }

  listArtifacts(filters: { type?: string; subject?: string; session?: string; name?: string } = {}):
    Promise<{ artifacts: ArtifactRecord[]; count: number }> {
    const params = new URLSearchParams();
    for (const [k, v] of Object.entries(filters)) {
      if (v) params.set(k, v);
    }
    const qs = params.toString();
    return this.call("GET", "/artifacts" + (qs ? "?" + qs : ""));
  }

  provenance(artifactId: string): Promise<{
    artifact_id: string;
    chain: { artifact_id: string; artifact_type: string; rule_id: string }[];
    producer: { rule_id: string; kind: string };
  }> {
    return this.call("GET", `/artifacts/${artifactId}/provenance`);
  }
}
