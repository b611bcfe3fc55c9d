// End-to-end acceptance flows against the real demo service (spawned as a
// child process with the deterministic heuristic backend plus a "broken"
// backend that always fails with 502).

import { type ChildProcess, spawn } from "node:child_process";
import { fileURLToPath } from "node:url";
import path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { createClient } from "../src/api";
import { renderError, renderPrediction, renderWhatif } from "../src/render";
import { exploreWhatif, submitCase } from "../src/state";
import { demoState, vitalsKeyedState } from "./support/demo";

const here = path.dirname(fileURLToPath(import.meta.url));

let child: ChildProcess;
let baseUrl = "";

beforeAll(async () => {
  child = spawn("python3", [path.join(here, "support", "server.py")], {
    stdio: ["ignore", "pipe", "inherit"],
  });
  baseUrl = await new Promise<string>((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("service did not start")), 20_000);
    child.stdout!.on("data", (chunk: Buffer) => {
      const line = chunk.toString().trim();
      if (line.startsWith("http")) {
        clearTimeout(timer);
        resolve(line);
      }
    });
    child.on("exit", (code) => reject(new Error(`service exited early (${code})`)));
  });
}, 30_000);

afterAll(() => {
  child?.kill();
});

function countingFetch(counts: Record<string, number>): typeof fetch {
  return ((url: RequestInfo | URL, init?: RequestInit) => {
    const key = new URL(String(url)).pathname;
    counts[key] = (counts[key] ?? 0) + 1;
    return fetch(url, init);
  }) as typeof fetch;
}

describe("console against the demo service", () => {
  it("reports a healthy service", async () => {
    const client = createClient(baseUrl);
    expect(await client.health()).toEqual({ status: "ok" });
    const info = await client.pipelines();
    expect(info.backends).toContain("demo");
    expect(info.backends).toContain("broken");
  });

  it("submitting the demo case renders the rule-table level", async () => {
    const client = createClient(baseUrl);
    const state = await submitCase(demoState(), client);
    expect(state.view.kind).toBe("prediction");
    if (state.view.kind !== "prediction") return;
    // the demo narrative keys the level-2 rule of the heuristic backend
    expect(state.view.response.predicted).toBe(2);
    const html = renderPrediction(state.view.response, state.form.triage_note);
    expect(html).toContain("ESI 2");
    expect(html).toContain("esi-2");
    // backend-supplied saliency is highlighted in the narrative
    expect(html).toContain("<mark");
  });

  it("toggling drop_vitals issues one whatif call and renders the comparison", async () => {
    const counts: Record<string, number> = {};
    const client = createClient(baseUrl, countingFetch(counts));
    // keyword sits in the vitals field, so removing vitals changes the level
    let state = await submitCase(vitalsKeyedState(), client);
    expect(state.view.kind).toBe("prediction");
    state.whatifToggles.drop_vitals = true;
    state = await exploreWhatif(state, client);

    expect(counts["/v1/whatif"]).toBe(1);
    expect(state.whatif?.map((entry) => entry.ablation)).toEqual(["none", "drop_vitals"]);
    const levels = state.whatif!.map((entry) => entry.response?.predicted);
    expect(levels).toEqual([2, 4]);

    const html = renderWhatif(state.whatif!);
    expect(html).toContain('data-columns="2"');
    expect(html).toContain("delta-badge");
    expect(html).toContain("changed: 2 &rarr; 4");
  });

  it("renders no delta badge when the ablation does not change the level", async () => {
    const client = createClient(baseUrl);
    let state = await submitCase(demoState(), client); // note pipeline ignores vitals
    state.whatifToggles.drop_vitals = true;
    state = await exploreWhatif(state, client);
    expect(state.whatif!.map((entry) => entry.response?.predicted)).toEqual([2, 2]);
    expect(renderWhatif(state.whatif!)).not.toContain("delta-badge");
  });

  it("a 502 renders the retry affordance without losing form state", async () => {
    const client = createClient(baseUrl);
    const before = demoState();
    before.backend = "broken";
    const after = await submitCase(before, client);
    expect(after.view).toMatchObject({ kind: "error", status: 502 });
    // the form object is the same instance with the same content
    expect(after.form).toBe(before.form);
    expect(after.form.chief_complaint).toBe("Cough and trouble breathing");
    if (after.view.kind !== "error") return;
    const html = renderError(after.view.status, after.view.message);
    expect(html).toContain('id="retry-btn"');
  });

  it("server-side strategy conflicts surface as errors, not fabricated levels", async () => {
    const client = createClient(baseUrl);
    const state = demoState();
    state.strategy = { kind: "ensemble", n_agents: 3, rounds: 1 }; // note_to_esi has no vignette
    const after = await submitCase(state, client);
    expect(after.view).toMatchObject({ kind: "error", status: 422 });
  });
});
