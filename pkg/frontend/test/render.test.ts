import { describe, expect, it } from "vitest";

import { esiBadge, renderError, renderPrediction, renderSaliencyText, renderWhatif } from "../src/render";
import type { PredictResponse, WhatifEntry } from "../src/types";

function response(overrides: Partial<PredictResponse> = {}): PredictResponse {
  return {
    schema_version: "1",
    pipeline: "note_to_esi",
    ablation: "none",
    strategy: "plain",
    predicted: 2,
    parse_failed: false,
    intermediates: {},
    ensemble: null,
    rag: null,
    saliency: null,
    raw_model_text: "ESI: 2. High risk.",
    latency_seconds: 0.01,
    backend_id: "demo",
    prompt_pack_version: "v1",
    ...overrides,
  };
}

describe("prediction view", () => {
  it("shows the level prominently with its acuity class", () => {
    const html = renderPrediction(response(), "short note");
    expect(html).toContain("ESI 2");
    expect(html).toContain("esi-2");
    expect(html).toContain("hero");
  });

  it("never renders a fabricated level on parse failure", () => {
    const html = renderPrediction(response({ predicted: null, parse_failed: true }), "note");
    expect(html).toContain("unparseable");
    expect(html).not.toMatch(/ESI [1-5]</);
  });

  it("renders the vignette panel when present", () => {
    const html = renderPrediction(
      response({
        intermediates: { vignette: { text: "A toddler with cough.", derived_from: "raw_note" } },
      }),
      "note",
    );
    expect(html).toContain("Clinical vignette (raw_note)");
    expect(html).toContain("A toddler with cough.");
  });

  it("renders one row per persona vote", () => {
    const votes = [
      { persona: "safety_first", level: 1, rationale: "airway risk" },
      { persona: "guideline_strict", level: 2, rationale: "meets level 2" },
      { persona: "resource_aware", level: 3, rationale: "two resources" },
      { persona: "red_flag_sentinel", level: 2, rationale: "vitals borderline" },
    ];
    const html = renderPrediction(
      response({ ensemble: { n_agents: 4, rounds: 1, round1: votes, final: votes } }),
      "note",
    );
    for (const vote of votes) {
      expect(html).toContain(vote.persona);
      expect(html).toContain(vote.rationale);
    }
  });

  it("escapes model and patient text", () => {
    const html = renderPrediction(
      response({ raw_model_text: "<script>alert(1)</script>" }),
      "<img src=x onerror=alert(1)>",
    );
    expect(html).not.toContain("<script>");
    expect(html).not.toContain("<img");
    expect(html).toContain("&lt;script&gt;");
  });
});

describe("saliency highlighting", () => {
  it("wraps scored tokens in mark elements", () => {
    const html = renderSaliencyText("visible respiratory distress today", {
      tokens: ["respiratory", "distress"],
      scores: [0.92, 0.4],
    });
    expect(html).toContain('<mark class="saliency-strong" title="score 0.92">respiratory</mark>');
    expect(html).toContain('<mark class="saliency-mild" title="score 0.40">distress</mark>');
    expect(html).toContain("visible ");
  });

  it("leaves text alone without saliency", () => {
    expect(renderSaliencyText("plain text", null)).toBe("plain text");
  });
});

describe("error view", () => {
  it("offers a retry affordance", () => {
    const html = renderError(502, "backend failure");
    expect(html).toContain('id="retry-btn"');
    expect(html).toContain("502");
    expect(html).toContain("backend failure");
  });
});

describe("what-if comparison", () => {
  const baseline = { ablation: "none", response: response({ predicted: 2 }) };

  it("renders one column per entry in order", () => {
    const entries: WhatifEntry[] = [
      baseline,
      { ablation: "drop_vitals", response: response({ predicted: 2, ablation: "drop_vitals" }) },
    ];
    const html = renderWhatif(entries);
    expect(html).toContain('data-columns="2"');
    const order = [...html.matchAll(/data-ablation="([a-z_]+)"/g)].map((m) => m[1]);
    expect(order).toEqual(["none", "drop_vitals"]);
  });

  it("badges a column whose level differs from baseline", () => {
    const entries: WhatifEntry[] = [
      baseline,
      { ablation: "drop_exam", response: response({ predicted: 4, ablation: "drop_exam" }) },
    ];
    const html = renderWhatif(entries);
    expect(html).toContain("delta-badge");
    expect(html).toContain("changed: 2 &rarr; 4");
  });

  it("shows no badge when levels agree", () => {
    const entries: WhatifEntry[] = [
      baseline,
      { ablation: "drop_vitals", response: response({ predicted: 2 }) },
    ];
    expect(renderWhatif(entries)).not.toContain("delta-badge");
  });

  it("renders three columns in the fixed order", () => {
    const entries: WhatifEntry[] = [
      baseline,
      { ablation: "drop_exam", response: response({ predicted: 4 }) },
      { ablation: "drop_vitals", response: response({ predicted: 2 }) },
    ];
    const order = [...renderWhatif(entries).matchAll(/data-ablation="([a-z_]+)"/g)].map((m) => m[1]);
    expect(order).toEqual(["none", "drop_exam", "drop_vitals"]);
  });

  it("renders per-entry errors inside their column", () => {
    const entries: WhatifEntry[] = [
      baseline,
      { ablation: "drop_exam", error: { status: 502, error: "backend failure" } },
    ];
    const html = renderWhatif(entries);
    expect(html).toContain("Error (502)");
    expect(html).toContain("backend failure");
  });
});

describe("esi badge colors", () => {
  it("uses the fixed acuity scale classes", () => {
    for (const level of [1, 2, 3, 4, 5]) {
      expect(esiBadge(level)).toContain(`esi-${level}`);
    }
    expect(esiBadge(null)).toContain("esi-none");
  });
});
