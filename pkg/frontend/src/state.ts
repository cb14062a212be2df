import type { ModelStatus } from "./api.js";

/** Per-session UI state. Label-submission controls exist only when the
 * resolved role is doctor. */
export interface SessionState {
  token: string;
  role: "doctor" | "patient" | null;
  pendingSamples: string[];
  lastStatus: ModelStatus | null;
}

export function newSession(token: string): SessionState {
  return { token, role: null, pendingSamples: [], lastStatus: null };
}

export function trackSample(state: SessionState, sampleId: string): void {
  state.pendingSamples.push(sampleId);
}

export function settleSample(state: SessionState, sampleId: string): void {
  state.pendingSamples = state.pendingSamples.filter((id) => id !== sampleId);
}

/** True when the status carries a version newer than the one last seen. */
export function versionBumped(state: SessionState, status: ModelStatus): boolean {
  const bumped = state.lastStatus !== null &&
    status.checkpoint_version > state.lastStatus.checkpoint_version;
  return bumped;
}
