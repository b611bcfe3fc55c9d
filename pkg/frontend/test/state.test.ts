import { describe, expect, it } from "vitest";

import { ApiError, type Client } from "../src/api";
import {
  buildRequest,
  canExploreWhatif,
  canSubmit,
  emptyForm,
  exploreWhatif,
  initialState,
  selectedAblations,
  submitCase,
} from "../src/state";
import type { PredictResponse } from "../src/types";
import { demoState } from "./support/demo";

const RESPONSE: PredictResponse = {
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
  raw_model_text: "ESI: 2.",
  latency_seconds: 0,
  backend_id: "demo",
  prompt_pack_version: "v1",
};

function stubClient(overrides: Partial<Client> = {}): Client {
  return {
    predict: async () => RESPONSE,
    whatif: async (_req, ablations) =>
      ablations.map((ablation) => ({ ablation, response: RESPONSE })),
    pipelines: async () => {
      throw new Error("not used");
    },
    health: async () => ({ status: "ok" }),
    ...overrides,
  };
}

describe("form gating", () => {
  it("requires chief complaint and age", () => {
    const form = emptyForm();
    expect(canSubmit(form, "note_to_esi")).toBe(false);
    form.chief_complaint = "Fever";
    expect(canSubmit(form, "note_to_esi")).toBe(false);
    form.age_months = 24;
    expect(canSubmit(form, "note_to_esi")).toBe(false); // note pipeline needs a note
    form.triage_note = "toddler with fever";
    expect(canSubmit(form, "note_to_esi")).toBe(true);
  });

  it("mirrors the structured pipeline preconditions", () => {
    const state = demoState();
    expect(canSubmit(state.form, "human_structured_to_esi")).toBe(true);
    state.form.physical_exam = "  ";
    expect(canSubmit(state.form, "human_structured_to_esi")).toBe(false);
    expect(canSubmit(state.form, "note_to_esi")).toBe(true);
  });
});

describe("submitCase", () => {
  it("stores the prediction view on success", async () => {
    const next = await submitCase(demoState(), stubClient());
    expect(next.view).toEqual({ kind: "prediction", response: RESPONSE });
  });

  it("keeps the form object untouched on server failure", async () => {
    const state = demoState();
    const failing = stubClient({
      predict: async () => {
        throw new ApiError(502, "backend failure");
      },
    });
    const next = await submitCase(state, failing);
    expect(next.view).toEqual({ kind: "error", status: 502, message: "backend failure" });
    expect(next.form).toBe(state.form); // same object, nothing reset
  });
});

describe("what-if flow", () => {
  it("orders ablations none, drop_exam, drop_vitals", () => {
    expect(selectedAblations({ drop_exam: true, drop_vitals: true })).toEqual([
      "none",
      "drop_exam",
      "drop_vitals",
    ]);
    expect(selectedAblations({ drop_exam: false, drop_vitals: true })).toEqual([
      "none",
      "drop_vitals",
    ]);
  });

  it("is disabled until a baseline prediction exists and a toggle is set", async () => {
    const state = demoState();
    state.whatifToggles.drop_vitals = true;
    expect(canExploreWhatif(state)).toBe(false); // no baseline yet
    const withBaseline = await submitCase(state, stubClient());
    expect(canExploreWhatif(withBaseline)).toBe(true);
    withBaseline.whatifToggles = { drop_exam: false, drop_vitals: false };
    expect(canExploreWhatif(withBaseline)).toBe(false);
  });

  it("issues one whatif call carrying the selected ablation list", async () => {
    const calls: string[][] = [];
    const client = stubClient({
      whatif: async (_req, ablations) => {
        calls.push([...ablations]);
        return ablations.map((ablation) => ({ ablation, response: RESPONSE }));
      },
    });
    let state = await submitCase(demoState(), client);
    state.whatifToggles.drop_vitals = true;
    state = await exploreWhatif(state, client);
    expect(calls).toEqual([["none", "drop_vitals"]]);
    expect(state.whatif?.map((entry) => entry.ablation)).toEqual(["none", "drop_vitals"]);
  });
});

describe("buildRequest", () => {
  it("omits the ablation field for the baseline", () => {
    const request = buildRequest(demoState());
    expect(request.ablation).toBeUndefined();
    expect(request.pipeline).toBe("note_to_esi");
    expect(request.backend).toBe("demo");
    expect(request.encounter.chief_complaint).toBe("Cough and trouble breathing");
  });

  it("drops empty optional fields", () => {
    const request = buildRequest(initialState());
    expect("nurse_esi" in request.encounter).toBe(false);
    expect("pivot_assessment" in request.encounter).toBe(false);
  });
});
