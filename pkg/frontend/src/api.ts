/** Typed client for the inference service. Every value the UI displays
 * comes out of these response payloads untouched. */

export interface DiagnosisPayload {
  sample_id: string;
  state: "diagnosed";
  predicted_category: string;
  per_category_mean_energy: Record<string, number>;
  per_member_energies: Record<string, number[]>;
  checkpoint_version: number;
  attention_map_pgm_base64: string | null;
}

export interface PendingDiagnosis {
  state: "received" | "diagnosing";
}

export interface LastEval {
  n?: number;
  accuracy?: number;
  ci_half_width?: number;
  action: string;
  reason?: string;
  version?: number;
}

export interface ModelStatus {
  checkpoint_version: number;
  categories: string[];
  standard_set_sizes: Record<string, number>;
  queue_length: number;
  training: "idle" | "running";
  last_eval: LastEval | null;
}

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

export class PollTimeout extends Error {
  constructor(public sampleId: string, timeoutMs: number) {
    super(`diagnosis for ${sampleId} not ready after ${timeoutMs / 1000}s`);
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let code = "http_error";
  let message = `${resp.status} ${resp.statusText}`;
  try {
    const body = await resp.json();
    if (body && body.error) {
      code = body.error.code ?? code;
      message = body.error.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(resp.status, code, message);
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

export class Client {
  constructor(public baseUrl: string, public token: string,
              private fetchFn: typeof fetch = fetch) {}

  private headers(): Record<string, string> {
    return { Authorization: `Bearer ${this.token}` };
  }

  async uploadSample(pgm: Uint8Array): Promise<string> {
    const resp = await this.fetchFn(`${this.baseUrl}/v1/samples`, {
      method: "POST",
      headers: { ...this.headers(), "Content-Type": "application/octet-stream" },
      body: pgm as unknown as BodyInit,
    });
    if (resp.status !== 202) throw await parseError(resp);
    const body = await resp.json();
    return body.sample_id as string;
  }

  async getDiagnosis(sampleId: string): Promise<DiagnosisPayload | PendingDiagnosis> {
    const resp = await this.fetchFn(
      `${this.baseUrl}/v1/samples/${encodeURIComponent(sampleId)}/diagnosis`,
      { headers: this.headers() });
    if (resp.status === 200 || resp.status === 202) {
      return await resp.json();
    }
    throw await parseError(resp);
  }

  async pollDiagnosis(sampleId: string, timeoutMs = 30_000,
                      intervalMs = 250): Promise<DiagnosisPayload> {
    const deadline = Date.now() + timeoutMs;
    while (Date.now() < deadline) {
      const result = await this.getDiagnosis(sampleId);
      if (result.state === "diagnosed") return result as DiagnosisPayload;
      await sleep(intervalMs);
    }
    throw new PollTimeout(sampleId, timeoutMs);
  }

  async submitLabel(pgm: Uint8Array, category: string): Promise<number> {
    const url = `${this.baseUrl}/v1/labels?category=${encodeURIComponent(category)}`;
    const resp = await this.fetchFn(url, {
      method: "POST",
      headers: { ...this.headers(), "Content-Type": "application/octet-stream" },
      body: pgm as unknown as BodyInit,
    });
    if (resp.status !== 202) throw await parseError(resp);
    const body = await resp.json();
    return body.queued_count as number;
  }

  async getStatus(): Promise<ModelStatus> {
    const resp = await this.fetchFn(`${this.baseUrl}/v1/model/status`,
                                    { headers: this.headers() });
    if (!resp.ok) throw await parseError(resp);
    return await resp.json();
  }

  /** Resolve the token's role without side effects: the labels endpoint
   * checks the role before it looks at the category or body, so an empty
   * probe comes back 403 for patients and 400 for doctors. */
  async resolveRole(): Promise<"doctor" | "patient"> {
    const resp = await this.fetchFn(`${this.baseUrl}/v1/labels?category=`, {
      method: "POST",
      headers: this.headers(),
      body: new Uint8Array(0) as unknown as BodyInit,
    });
    if (resp.status === 403) return "patient";
    if (resp.status === 400) return "doctor";
    throw await parseError(resp);
  }
}
