import { ApiError, Client, PollTimeout } from "./api.js";
import type { DiagnosisPayload, ModelStatus } from "./api.js";
import type { SessionState } from "./state.js";
import { settleSample, trackSample, versionBumped } from "./state.js";
import {
  renderDiagnosis, renderError, renderLabelConfirmation, renderPollTimeout,
  renderStatus,
} from "./views.js";

export interface FlowResult<T> {
  html: string;
  data: T | null;
}

/** Upload a PGM payload, poll until the diagnosis lands, render it. */
export async function uploadFlow(client: Client, state: SessionState,
                                 pgm: Uint8Array, timeoutMs = 30_000,
                                 intervalMs = 250,
                                 ): Promise<FlowResult<DiagnosisPayload>> {
  let sampleId: string;
  try {
    sampleId = await client.uploadSample(pgm);
  } catch (err) {
    if (err instanceof ApiError) return { html: renderError(err.message, err.code), data: null };
    throw err;
  }
  trackSample(state, sampleId);
  try {
    const diagnosis = await client.pollDiagnosis(sampleId, timeoutMs, intervalMs);
    settleSample(state, sampleId);
    return { html: renderDiagnosis(diagnosis), data: diagnosis };
  } catch (err) {
    if (err instanceof PollTimeout) {
      return { html: renderPollTimeout(sampleId), data: null };
    }
    settleSample(state, sampleId);
    if (err instanceof ApiError) return { html: renderError(err.message, err.code), data: null };
    throw err;
  }
}

/** Submit a doctor-verified labeled image; render the queue position. */
export async function labelFlow(client: Client, pgm: Uint8Array, category: string,
                                threshold: number): Promise<FlowResult<number>> {
  try {
    const queued = await client.submitLabel(pgm, category);
    return { html: renderLabelConfirmation(queued, threshold), data: queued };
  } catch (err) {
    if (err instanceof ApiError) {
      const message = err.status === 403
        ? "your token's role cannot submit labels" : err.message;
      return { html: renderError(message, err.code), data: null };
    }
    throw err;
  }
}

/** One dashboard refresh: fetch status, highlight version bumps. */
export async function statusRefresh(client: Client, state: SessionState,
                                    ): Promise<FlowResult<ModelStatus>> {
  try {
    const status = await client.getStatus();
    const bumped = versionBumped(state, status);
    state.lastStatus = status;
    return { html: renderStatus(status, bumped), data: status };
  } catch (err) {
    if (err instanceof ApiError) return { html: renderError(err.message, err.code), data: null };
    return {
      html: renderError("server unreachable, showing stale data", "stale"),
      data: null,
    };
  }
}
