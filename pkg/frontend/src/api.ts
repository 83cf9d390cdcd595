// Thin fetch client for the eabo elicitation service. Every helper returns
// the parsed JSON body; non-2xx responses raise ApiError carrying the
// service's {code, message} payload when one is present.

import type {
  ApiErrorBody,
  QueryMessage,
  SessionState,
  SessionSummary,
  SubmitReply,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  readonly field?: string;

  constructor(status: number, body: ApiErrorBody | null, fallback: string) {
    super(body?.message ?? fallback);
    this.status = status;
    this.code = body?.code ?? "http_error";
    this.field = body?.field;
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(base + path, {
    ...init,
    headers: { "content-type": "application/json", ...(init?.headers ?? {}) },
  });
  let body: unknown = null;
  const text = await response.text();
  if (text.length > 0) {
    try {
      body = JSON.parse(text);
    } catch {
      body = null;
    }
  }
  if (!response.ok) {
    const err =
      body !== null && typeof body === "object" && "code" in (body as Record<string, unknown>)
        ? (body as ApiErrorBody)
        : null;
    throw new ApiError(response.status, err, `HTTP ${response.status} on ${path}`);
  }
  return body as T;
}

export interface SubmitPayload {
  iteration: number;
  y?: number[];
  d?: 0 | 1;
  abandon?: boolean;
}

export class Client {
  readonly base: string;

  constructor(base: string) {
    this.base = base.replace(/\/+$/, "");
  }

  createSession(config: Record<string, unknown>): Promise<SessionSummary> {
    return request(this.base, "/v1/sessions", {
      method: "POST",
      body: JSON.stringify(config),
    });
  }

  getSession(id: string): Promise<SessionSummary> {
    return request(this.base, `/v1/sessions/${id}`);
  }

  getState(id: string): Promise<SessionState> {
    return request(this.base, `/v1/sessions/${id}/state`);
  }

  getExport(id: string): Promise<unknown> {
    return request(this.base, `/v1/sessions/${id}/export`);
  }

  submit(id: string, payload: SubmitPayload): Promise<SubmitReply> {
    return request(this.base, `/v1/sessions/${id}/response`, {
      method: "POST",
      body: JSON.stringify(payload),
    });
  }
}

/** True when the state still carries an open query for this iteration. */
export function hasOpenQuery(state: {
  status: string;
  query?: QueryMessage;
}): state is { status: "awaiting_response"; query: QueryMessage } {
  return state.status === "awaiting_response" && state.query !== undefined;
}
