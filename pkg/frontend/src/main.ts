import { Client } from "./api.js";
import { labelFlow, statusRefresh, uploadFlow } from "./flows.js";
import { overlayHeatmap } from "./heatmap.js";
import { decodeBase64Pgm, encodePgm, grayscaleFromRgba } from "./pgm.js";
import type { GrayImage } from "./pgm.js";
import { newSession } from "./state.js";
import { renderError, renderLabelControls } from "./views.js";

const POLL_INTERVAL_MS = 2000;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function fileToGray(file: File): Promise<GrayImage> {
  const bitmap = await createImageBitmap(file);
  const canvas = document.createElement("canvas");
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(bitmap, 0, 0);
  const rgba = ctx.getImageData(0, 0, bitmap.width, bitmap.height);
  return grayscaleFromRgba(rgba.data, bitmap.width, bitmap.height);
}

function drawOverlay(container: HTMLElement, source: GrayImage,
                     attentionB64: string | null): void {
  const canvas = container.querySelector<HTMLCanvasElement>(".attention-overlay");
  if (!canvas || !attentionB64) return;
  const attention = decodeBase64Pgm(attentionB64);
  canvas.width = source.width;
  canvas.height = source.height;
  const ctx = canvas.getContext("2d")!;
  const rgba = overlayHeatmap(source, attention) as Uint8ClampedArray<ArrayBuffer>;
  ctx.putImageData(new ImageData(rgba, source.width, source.height), 0, 0);
}

function start(): void {
  const baseUrl = (window.location.pathname.startsWith("/ui"))
    ? window.location.origin
    : el<HTMLInputElement>("server-url").value;
  const token = el<HTMLInputElement>("token").value.trim();
  if (!token) {
    el("session-error").innerHTML = renderError("enter an access token");
    return;
  }
  const client = new Client(baseUrl, token);
  const session = newSession(token);

  client.resolveRole().then(async (role) => {
    session.role = role;
    el("login").hidden = true;
    el("workspace").hidden = false;
    el("role-badge").textContent = role;

    const status = await client.getStatus();
    session.lastStatus = status;
    el("label-pane").innerHTML = renderLabelControls(status.categories, role);
    wireLabelForm(client, status.categories);

    window.setInterval(async () => {
      const refresh = await statusRefresh(client, session);
      el("status-pane").innerHTML = refresh.html;
    }, POLL_INTERVAL_MS);
  }).catch((err) => {
    el("session-error").innerHTML = renderError(String(err.message ?? err));
  });

  el<HTMLInputElement>("upload-file").addEventListener("change", async (event) => {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    const pane = el("diagnosis-pane");
    pane.innerHTML = "<p>uploading…</p>";
    try {
      const gray = await fileToGray(file);
      const result = await uploadFlow(client, session, encodePgm(gray));
      pane.innerHTML = result.html;
      if (result.data) drawOverlay(pane, gray, result.data.attention_map_pgm_base64);
      pane.querySelector<HTMLButtonElement>("button.retry")?.addEventListener(
        "click", () => input.dispatchEvent(new Event("change")));
    } catch (err) {
      pane.innerHTML = renderError(String((err as Error).message ?? err));
    }
  });

  function wireLabelForm(client: Client, categories: string[]): void {
    const submit = document.getElementById("label-submit");
    if (!submit) return; // patient role: no controls rendered
    submit.addEventListener("click", async () => {
      const fileInput = el<HTMLInputElement>("label-file");
      const category = el<HTMLSelectElement>("label-category").value;
      const file = fileInput.files?.[0];
      const pane = el("label-result");
      if (!file || !categories.includes(category)) {
        pane.innerHTML = renderError("choose an image and a known category");
        return;
      }
      const gray = await fileToGray(file);
      const threshold = 50; // display hint; the server owns the real policy
      const result = await labelFlow(client, encodePgm(gray), category, threshold);
      pane.innerHTML = result.html;
    });
  }
}

document.getElementById("connect")?.addEventListener("click", start);
