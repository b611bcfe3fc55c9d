// Application state and transitions, kept pure so the flows are testable
// without a browser.  The form object is never replaced on a failed
// submission: error views leave it untouched.

import { ApiError, type Client } from "./api";
import type {
  AblationKind,
  EncounterForm,
  PipelineKind,
  PredictRequest,
  PredictResponse,
  StrategyChoice,
  WhatifEntry,
} from "./types";

export type ResultView =
  | { kind: "empty" }
  | { kind: "loading" }
  | { kind: "prediction"; response: PredictResponse }
  | { kind: "error"; status: number; message: string };

export interface WhatifToggles {
  drop_exam: boolean;
  drop_vitals: boolean;
}

export interface AppState {
  form: EncounterForm;
  pipeline: PipelineKind;
  strategy: StrategyChoice;
  backend: string;
  view: ResultView;
  whatifToggles: WhatifToggles;
  whatif: WhatifEntry[] | null;
  whatifError: string | null;
}

export function emptyForm(): EncounterForm {
  return {
    age_months: null,
    chief_complaint: "",
    vital_signs: "",
    physical_exam: "",
    pmh: "",
    triage_note: "",
  };
}

export function initialState(): AppState {
  return {
    form: emptyForm(),
    pipeline: "note_to_esi",
    strategy: { kind: "plain" },
    backend: "demo",
    view: { kind: "empty" },
    whatifToggles: { drop_exam: false, drop_vitals: false },
    whatif: null,
    whatifError: null,
  };
}

// Mirrors the server-side pipeline preconditions so the submit button can
// be disabled before a request is ever issued.
export function requiredFields(pipeline: PipelineKind): (keyof EncounterForm)[] {
  if (pipeline === "human_structured_to_esi" || pipeline === "human_structured_to_vignette_to_esi") {
    return ["chief_complaint", "vital_signs", "physical_exam"];
  }
  return ["triage_note"];
}

export function canSubmit(form: EncounterForm, pipeline: PipelineKind): boolean {
  if (!form.chief_complaint.trim() || form.age_months === null) {
    return false;
  }
  return requiredFields(pipeline).every((field) => {
    const value = form[field];
    return typeof value === "string" ? value.trim().length > 0 : value != null;
  });
}

export function buildRequest(state: AppState, ablation: AblationKind = "none"): PredictRequest {
  const encounter: Record<string, unknown> = {
    age_months: state.form.age_months,
    chief_complaint: state.form.chief_complaint,
    vital_signs: state.form.vital_signs,
    physical_exam: state.form.physical_exam,
    pmh: state.form.pmh,
    triage_note: state.form.triage_note,
  };
  if (state.form.id) encounter.id = state.form.id;
  if (state.form.pivot_assessment) encounter.pivot_assessment = state.form.pivot_assessment;
  if (state.form.nurse_esi != null) encounter.nurse_esi = state.form.nurse_esi;
  const request: PredictRequest = {
    encounter,
    pipeline: state.pipeline,
    strategy: state.strategy,
    backend: state.backend,
  };
  if (ablation !== "none") request.ablation = ablation;
  return request;
}

function toErrorView(err: unknown): ResultView {
  if (err instanceof ApiError) {
    return { kind: "error", status: err.status, message: err.message };
  }
  return { kind: "error", status: 0, message: err instanceof Error ? err.message : String(err) };
}

export async function submitCase(state: AppState, client: Client): Promise<AppState> {
  if (!canSubmit(state.form, state.pipeline)) {
    return state;
  }
  try {
    const response = await client.predict(buildRequest(state));
    return { ...state, view: { kind: "prediction", response }, whatif: null, whatifError: null };
  } catch (err) {
    // the form object is preserved untouched so nothing is lost on retry
    return { ...state, view: toErrorView(err) };
  }
}

// Fixed comparison order: baseline first, then drop_exam, then drop_vitals.
export function selectedAblations(toggles: WhatifToggles): AblationKind[] {
  const ablations: AblationKind[] = ["none"];
  if (toggles.drop_exam) ablations.push("drop_exam");
  if (toggles.drop_vitals) ablations.push("drop_vitals");
  return ablations;
}

export function canExploreWhatif(state: AppState): boolean {
  return (
    state.view.kind === "prediction" &&
    (state.whatifToggles.drop_exam || state.whatifToggles.drop_vitals)
  );
}

export async function exploreWhatif(state: AppState, client: Client): Promise<AppState> {
  if (!canExploreWhatif(state)) {
    return state;
  }
  const ablations = selectedAblations(state.whatifToggles);
  try {
    const entries = await client.whatif(buildRequest(state), ablations);
    return { ...state, whatif: entries, whatifError: null };
  } catch (err) {
    const view = toErrorView(err);
    return {
      ...state,
      whatif: null,
      whatifError: view.kind === "error" ? view.message : String(err),
    };
  }
}
