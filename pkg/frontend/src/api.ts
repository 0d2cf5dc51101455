// Typed client over the audit-design service. Long computations come back
// as jobs; pollJob() follows them with cancellation support.

import type {
  ApiErrorBody,
  DesignOutputDoc,
  JobDoc,
  ModelDoc,
  ParamsDoc,
  SessionDoc,
  StrataDoc,
  ThetaDoc,
  ValidatedRecord,
  WavePlanDoc,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly body: ApiErrorBody;

  constructor(status: number, body: ApiErrorBody) {
    super(`${status} ${body.type}: ${body.message}`);
    this.status = status;
    this.body = body;
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let body: ApiErrorBody = { type: "HttpError", message: resp.statusText };
  try {
    const doc = await resp.json();
    if (doc && typeof doc === "object") {
      if ("error" in doc) body = (doc as { error: ApiErrorBody }).error;
      else if ("detail" in doc) body = { type: "HttpError", message: String(doc.detail) };
    }
  } catch {
    // keep the status-line fallback
  }
  return new ApiError(resp.status, body);
}

export interface DesignRequest {
  strata: StrataDoc;
  params?: ParamsDoc | null;
  n: number;
  m?: number;
  max_rows?: number;
  strategy: "srs" | "ccstar" | "bccstar" | "optmle";
  seed?: number;
  weighting?: "observed" | "expected";
  steps?: number[];
}

export interface SessionCreateRequest {
  strata: StrataDoc;
  model: ModelDoc;
  n: number;
  m?: number;
  waves?: number;
  prior_theta?: ThetaDoc | null;
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(this.base + path, {
      method,
      headers: body === undefined ? {} : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  startDesign(req: DesignRequest): Promise<{ job_id: string }> {
    return this.request("POST", "/v1/design", req);
  }

  startSimulation(scenario: unknown): Promise<{ job_id: string }> {
    return this.request("POST", "/v1/simulate", { scenario });
  }

  getJob<R>(jobId: string): Promise<JobDoc<R>> {
    return this.request("GET", `/v1/jobs/${jobId}`);
  }

  async pollJob<R>(
    jobId: string,
    onProgress?: (job: JobDoc<R>) => void,
    options: { intervalMs?: number; signal?: AbortSignal } = {},
  ): Promise<JobDoc<R>> {
    const interval = options.intervalMs ?? 300;
    for (;;) {
      if (options.signal?.aborted) throw new DOMException("polling cancelled", "AbortError");
      const job = await this.getJob<R>(jobId);
      onProgress?.(job);
      if (job.status === "done" || job.status === "failed") return job;
      await new Promise((resolve) => setTimeout(resolve, interval));
    }
  }

  async runDesign(
    req: DesignRequest,
    onProgress?: (job: JobDoc<DesignOutputDoc>) => void,
    signal?: AbortSignal,
  ): Promise<DesignOutputDoc> {
    const { job_id } = await this.startDesign(req);
    const job = await this.pollJob<DesignOutputDoc>(job_id, onProgress, { signal });
    if (job.status === "failed" || job.result === null) {
      throw new ApiError(422, job.error ?? { type: "JobFailed", message: "job failed" });
    }
    return job.result;
  }

  createSession(req: SessionCreateRequest): Promise<SessionDoc> {
    return this.request("POST", "/v1/sessions", req);
  }

  getSession(id: string): Promise<SessionDoc> {
    return this.request("GET", `/v1/sessions/${id}`);
  }

  planWave(id: string, seed: number, version?: number): Promise<{ plan: WavePlanDoc }> {
    return this.request("POST", `/v1/sessions/${id}/plan-wave`, { seed, version });
  }

  ingest(id: string, records: ValidatedRecord[], version?: number):
      Promise<{ ingested: number; total_validated: number }> {
    return this.request("POST", `/v1/sessions/${id}/ingest`, { records, version });
  }

  refit(id: string, version?: number): Promise<SessionDoc["fits"][number]> {
    return this.request("POST", `/v1/sessions/${id}/refit`, { version });
  }

  finalize(id: string, version?: number): Promise<NonNullable<SessionDoc["final_fit"]>> {
    return this.request("POST", `/v1/sessions/${id}/finalize`, { version });
  }
}
