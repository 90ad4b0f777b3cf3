/** Fetch client for the session service.
 *
 *  Each method returns the parsed response payload untouched. Non-2xx
 *  responses raise ApiError carrying the server's error envelope, so callers
 *  can surface the diagnostic instead of guessing at causes locally.
 */

import type {
  CandidatesPayload,
  CostPayload,
  ErrorBody,
  ErrorInfo,
  GraphPayload,
  PlanEcho,
  PlanRequest,
  RunReport,
  SessionInfo,
  TraceItem,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly body: ErrorBody | null;

  constructor(status: number, body: ErrorBody | null, fallback: string) {
    super(body?.error?.message ?? fallback);
    this.name = "ApiError";
    this.status = status;
    this.body = body;
  }

  get info(): ErrorInfo {
    return this.body?.error ?? { code: "Unknown", message: this.message };
  }

  get code(): string {
    return this.info.code;
  }
}

async function toApiError(res: Response): Promise<ApiError> {
  let body: ErrorBody | null = null;
  try {
    const parsed: unknown = await res.json();
    if (typeof parsed === "object" && parsed !== null && "error" in parsed) {
      body = parsed as ErrorBody;
    }
  } catch {
    // non-JSON error page; keep the status line as the message
  }
  return new ApiError(res.status, body, `${res.status} ${res.statusText}`);
}

const JSON_HEADERS = { "content-type": "application/json" };

export class StudioApi {
  constructor(readonly base: string) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(this.base + path, init);
    if (!res.ok) throw await toApiError(res);
    return (await res.json()) as T;
  }

  createSession(bpmn: string): Promise<SessionInfo> {
    return this.json("/sessions", {
      method: "POST",
      body: bpmn,
      headers: { "content-type": "application/xml" },
    });
  }

  graph(session: string): Promise<GraphPayload> {
    return this.json(`/sessions/${session}/graph`);
  }

  candidates(session: string): Promise<CandidatesPayload> {
    return this.json(`/sessions/${session}/candidates`);
  }

  putPlan(session: string, plan: PlanRequest): Promise<PlanEcho> {
    return this.json(`/sessions/${session}/plan`, {
      method: "PUT",
      body: JSON.stringify(plan),
      headers: JSON_HEADERS,
    });
  }

  cost(session: string, sizes?: number[]): Promise<CostPayload> {
    const query = sizes && sizes.length ? `?sizes=${sizes.join(",")}` : "";
    return this.json(`/sessions/${session}/cost${query}`);
  }

  /** Compile the package server-side; the serialized bytes come back as text. */
  async generate(session: string): Promise<string> {
    const res = await fetch(`${this.base}/sessions/${session}/generate`, {
      method: "POST",
    });
    if (!res.ok) throw await toApiError(res);
    return res.text();
  }

  run(session: string, trace: TraceItem[], seed = 1): Promise<RunReport> {
    return this.json(`/sessions/${session}/run`, {
      method: "POST",
      body: JSON.stringify({ trace, seed }),
      headers: JSON_HEADERS,
    });
  }

  report(session: string): Promise<RunReport> {
    return this.json(`/sessions/${session}/report`);
  }
}
