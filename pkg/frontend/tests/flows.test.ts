import { describe, expect, it, vi } from "vitest";

import { Client } from "../src/api.js";
import { labelFlow, statusRefresh, uploadFlow } from "../src/flows.js";
import { newSession } from "../src/state.js";

const PGM = new Uint8Array([80, 53, 10, 49, 32, 49, 10, 50, 53, 53, 10, 9]);

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status, headers: { "Content-Type": "application/json" },
  });
}

const DIAGNOSIS = {
  sample_id: "s1", state: "diagnosed", predicted_category: "hbar",
  per_category_mean_energy: { hbar: 0.21, vbar: 1.93 },
  per_member_energies: { hbar: [0.21], vbar: [1.93] },
  checkpoint_version: 1, attention_map_pgm_base64: null,
};

describe("uploadFlow", () => {
  it("uploads, polls to completion and renders the diagnosis", async () => {
    const calls: string[] = [];
    const fetchFn = vi.fn(async (url: RequestInfo | URL) => {
      calls.push(String(url));
      if (String(url).endsWith("/v1/samples")) {
        return jsonResponse(202, { sample_id: "s1" });
      }
      if (calls.length === 2) return jsonResponse(202, { state: "diagnosing" });
      return jsonResponse(200, DIAGNOSIS);
    });
    const client = new Client("http://x", "tok", fetchFn as unknown as typeof fetch);
    const session = newSession("tok");
    const result = await uploadFlow(client, session, PGM, 5000, 1);
    expect(result.data?.predicted_category).toBe("hbar");
    expect(result.html).toContain("Diagnosis");
    expect(result.html).toContain("0.2100");
    expect(session.pendingSamples).toEqual([]);
  });

  it("renders a 400 inline without a phantom sample row", async () => {
    const fetchFn = vi.fn(async () => jsonResponse(400, {
      error: { code: "bad_image", message: "expected magic 'P5' (at byte offset 0)" },
    }));
    const client = new Client("http://x", "tok", fetchFn as unknown as typeof fetch);
    const session = newSession("tok");
    const result = await uploadFlow(client, session, PGM);
    expect(result.data).toBeNull();
    expect(result.html).toContain("bad_image");
    expect(result.html).toContain("byte offset 0");
    expect(result.html).not.toContain("data-sample");
    expect(session.pendingSamples).toEqual([]);
  });

  it("shows a retry view after the poll timeout", async () => {
    const fetchFn = vi.fn(async (url: RequestInfo | URL) => {
      if (String(url).endsWith("/v1/samples")) {
        return jsonResponse(202, { sample_id: "slow" });
      }
      return jsonResponse(202, { state: "diagnosing" });
    });
    const client = new Client("http://x", "tok", fetchFn as unknown as typeof fetch);
    const session = newSession("tok");
    const result = await uploadFlow(client, session, PGM, 30, 5);
    expect(result.data).toBeNull();
    expect(result.html).toContain("Retry");
    expect(session.pendingSamples).toEqual(["slow"]);
  });
});

describe("labelFlow", () => {
  it("reports the queue count on success", async () => {
    const fetchFn = vi.fn(async () => jsonResponse(202, { queued_count: 2 }));
    const client = new Client("http://x", "dr", fetchFn as unknown as typeof fetch);
    const result = await labelFlow(client, PGM, "hbar", 3);
    expect(result.data).toBe(2);
    expect(result.html).toContain(`class="queue-count">2<`);
  });

  it("renders 403 as a role error", async () => {
    const fetchFn = vi.fn(async () => jsonResponse(403, {
      error: { code: "forbidden", message: "only doctor-role tokens may submit labels" },
    }));
    const client = new Client("http://x", "pt", fetchFn as unknown as typeof fetch);
    const result = await labelFlow(client, PGM, "hbar", 3);
    expect(result.data).toBeNull();
    expect(result.html).toContain("role");
  });
});

describe("statusRefresh", () => {
  const STATUS = {
    checkpoint_version: 3, categories: ["hbar"], standard_set_sizes: { hbar: 2 },
    queue_length: 0, training: "idle", last_eval: null,
  };

  it("highlights a version bump exactly once", async () => {
    const fetchFn = vi.fn(async () => jsonResponse(200, STATUS));
    const client = new Client("http://x", "tok", fetchFn as unknown as typeof fetch);
    const session = newSession("tok");
    session.lastStatus = { ...STATUS, checkpoint_version: 2 };
    const first = await statusRefresh(client, session);
    expect(first.html).toContain("version-bump");
    const second = await statusRefresh(client, session);
    expect(second.html).not.toContain("version-bump");
  });

  it("shows a stale-data banner when the server is unreachable", async () => {
    const fetchFn = vi.fn(async () => { throw new TypeError("fetch failed"); });
    const client = new Client("http://x", "tok", fetchFn as unknown as typeof fetch);
    const result = await statusRefresh(client, newSession("tok"));
    expect(result.data).toBeNull();
    expect(result.html).toContain("stale");
  });
});

describe("role probe", () => {
  it("resolves doctor from a 400 and patient from a 403", async () => {
    const doctor = new Client("http://x", "dr", (async () => jsonResponse(400, {
      error: { code: "unknown_category", message: "category '' is not known" },
    })) as unknown as typeof fetch);
    expect(await doctor.resolveRole()).toBe("doctor");
    const patient = new Client("http://x", "pt", (async () => jsonResponse(403, {
      error: { code: "forbidden", message: "no" },
    })) as unknown as typeof fetch);
    expect(await patient.resolveRole()).toBe("patient");
  });
});
