// Thin service client. fetch is injected so tests run against a mocked
// service; submission is blocked locally when validation fails.

import { requestJson } from "./serialize";
import { EditorState } from "./state";
import { validateForSubmit, ValidationError } from "./validate";
import { CheckpointInfo, JobView, ServiceError } from "./types";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class LocalValidationError extends Error {
  constructor(public errors: ValidationError[]) {
    super(errors.map((e) => `${e.field}: ${e.message}`).join("; "));
  }
}

export class ServiceRequestError extends Error {
  constructor(public status: number, public body: ServiceError) {
    super(body.field ? `${body.field}: ${body.error}` : body.error);
  }
}

export class ServiceClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  // Local validation runs first; nothing goes on the wire when it fails.
  async submitEdit(state: EditorState): Promise<string> {
    const errors = validateForSubmit(state);
    if (errors.length > 0) throw new LocalValidationError(errors);
    const res = await this.fetchFn(`${this.baseUrl}/api/jobs`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: requestJson(state),
    });
    if (res.status !== 202) {
      throw new ServiceRequestError(res.status, await res.json());
    }
    const body = (await res.json()) as { id: string };
    return body.id;
  }

  async jobView(id: string): Promise<JobView> {
    const res = await this.fetchFn(`${this.baseUrl}/api/jobs/${id}`);
    if (!res.ok) throw new ServiceRequestError(res.status, await res.json());
    return (await res.json()) as JobView;
  }

  // Poll until DONE or FAILED; resolves with the terminal view.
  async pollJob(id: string, intervalMs = 250, timeoutMs = 120_000): Promise<JobView> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const view = await this.jobView(id);
      if (view.status === "DONE" || view.status === "FAILED") return view;
      if (Date.now() >= deadline) throw new Error(`job ${id} timed out`);
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }

  async resultMidi(id: string): Promise<ArrayBuffer> {
    const res = await this.fetchFn(`${this.baseUrl}/api/jobs/${id}/midi`);
    if (!res.ok) throw new ServiceRequestError(res.status, await res.json());
    return res.arrayBuffer();
  }

  async checkpoint(): Promise<CheckpointInfo> {
    const res = await this.fetchFn(`${this.baseUrl}/api/checkpoint`);
    if (!res.ok) throw new ServiceRequestError(res.status, await res.json());
    return (await res.json()) as CheckpointInfo;
  }
}
