import type { DiagnosisPayload, LastEval, ModelStatus } from "./api.js";

/** HTML renderers. Every number shown is a field of a server payload,
 * formatted but never recomputed: the UI does no diagnosis logic. */

export function escapeHtml(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderEnergyBars(energies: Record<string, number>,
                                 predicted: string): string {
  const entries = Object.entries(energies).sort(([a], [b]) => a.localeCompare(b));
  const max = Math.max(...entries.map(([, v]) => v), 1e-9);
  const rows = entries.map(([category, value]) => {
    const width = Math.max(Math.round((value / max) * 100), 2);
    const winner = category === predicted ? " winner" : "";
    return `<div class="energy-row${winner}" data-category="${escapeHtml(category)}">` +
      `<span class="energy-label">${escapeHtml(category)}</span>` +
      `<span class="energy-bar" style="width:${width}%"></span>` +
      `<span class="energy-value">${value.toFixed(4)}</span></div>`;
  });
  return `<div class="energy-chart">${rows.join("")}</div>`;
}

export function renderDiagnosis(d: DiagnosisPayload): string {
  return `<section class="diagnosis" data-sample="${escapeHtml(d.sample_id)}">` +
    `<h2>Diagnosis: <strong class="predicted">${escapeHtml(d.predicted_category)}` +
    `</strong></h2>` +
    `<p class="meta">sample ${escapeHtml(d.sample_id)} · checkpoint v` +
    `<span class="version">${d.checkpoint_version}</span></p>` +
    renderEnergyBars(d.per_category_mean_energy, d.predicted_category) +
    `<div class="overlay-slot"><canvas class="attention-overlay"></canvas>` +
    `<p class="overlay-caption">attention overlay</p></div></section>`;
}

export function renderPending(sampleId: string, state: string): string {
  return `<section class="pending" data-sample="${escapeHtml(sampleId)}">` +
    `<p>sample ${escapeHtml(sampleId)}: ${escapeHtml(state)}…</p></section>`;
}

export function renderPollTimeout(sampleId: string): string {
  return `<section class="poll-timeout" data-sample="${escapeHtml(sampleId)}">` +
    `<p>The diagnosis is taking longer than 30 s.</p>` +
    `<button class="retry" data-sample="${escapeHtml(sampleId)}">Retry</button>` +
    `</section>`;
}

export function renderError(message: string, code = ""): string {
  const label = code ? `${escapeHtml(code)}: ` : "";
  return `<section class="error"><p>${label}${escapeHtml(message)}</p></section>`;
}

export function renderLabelControls(categories: string[], role: string | null): string {
  if (role !== "doctor") {
    return `<section class="label-info"><p>Verified doctors can submit labeled ` +
      `samples to improve the model.</p></section>`;
  }
  const options = categories.map((c) =>
    `<option value="${escapeHtml(c)}">${escapeHtml(c)}</option>`).join("");
  return `<section class="label-form">` +
    `<input type="file" id="label-file" accept="image/*">` +
    `<select id="label-category">${options}</select>` +
    `<button id="label-submit">Submit label</button></section>`;
}

export function renderLabelConfirmation(queued: number, threshold: number): string {
  const remaining = Math.max(threshold - queued, 0);
  const note = remaining === 0
    ? "threshold reached, retraining will start"
    : `${remaining} more to trigger retraining`;
  return `<section class="label-confirm"><p>queued ` +
    `<span class="queue-count">${queued}</span> of ${threshold} (${note})</p>` +
    `</section>`;
}

function renderLastEval(lastEval: LastEval | null): string {
  if (!lastEval) return `<p class="last-eval">no evaluation yet</p>`;
  const parts = [`action ${escapeHtml(lastEval.action)}`];
  if (lastEval.accuracy !== undefined && lastEval.n !== undefined) {
    parts.push(`accuracy ${(lastEval.accuracy * 100).toFixed(2)}%` +
      ` ± ${((lastEval.ci_half_width ?? 0) * 100).toFixed(2)}% (n=${lastEval.n})`);
  }
  if (lastEval.reason) parts.push(escapeHtml(lastEval.reason));
  return `<p class="last-eval">${parts.join(" · ")}</p>`;
}

export function renderStatus(status: ModelStatus, bumped: boolean): string {
  const badge = status.training === "running"
    ? `<span class="badge running">running</span>`
    : `<span class="badge idle">idle</span>`;
  const bump = bumped ? ` <span class="version-bump">new!</span>` : "";
  const sizes = Object.entries(status.standard_set_sizes)
    .sort(([a], [b]) => a.localeCompare(b))
    .map(([c, k]) => `${escapeHtml(c)}: ${k}`).join(", ");
  return `<section class="status">` +
    `<p>checkpoint <span class="version">v${status.checkpoint_version}</span>${bump}</p>` +
    `<p>training ${badge}</p>` +
    `<p>queue <span class="queue-count">${status.queue_length}</span></p>` +
    `<p>standard set — ${sizes}</p>` +
    renderLastEval(status.last_eval) +
    `</section>`;
}
