// DOM bootstrap: reads the form, drives the pure state transitions, and
// swaps rendered HTML into the results region.  The form itself is regular
// DOM state and is never re-rendered, so failed requests cannot clear it.

import { createClient } from "./api";
import { renderError, renderPrediction, renderWhatif } from "./render";
import {
  canExploreWhatif,
  canSubmit,
  exploreWhatif,
  initialState,
  submitCase,
} from "./state";
import type { PipelineKind } from "./types";

const client = createClient("");
let state = initialState();

function element<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function readForm(): void {
  const age = element<HTMLInputElement>("age_months").value;
  state.form = {
    age_months: age === "" ? null : Number(age),
    chief_complaint: element<HTMLInputElement>("chief_complaint").value,
    vital_signs: element<HTMLInputElement>("vital_signs").value,
    physical_exam: element<HTMLInputElement>("physical_exam").value,
    pmh: element<HTMLInputElement>("pmh").value,
    triage_note: element<HTMLTextAreaElement>("triage_note").value,
  };
  state.pipeline = element<HTMLSelectElement>("pipeline").value as PipelineKind;
  const strategy = element<HTMLSelectElement>("strategy").value;
  state.strategy =
    strategy === "ensemble"
      ? { kind: "ensemble", n_agents: 4, rounds: 2 }
      : strategy === "rag"
        ? { kind: "rag" }
        : { kind: "plain" };
  state.whatifToggles = {
    drop_exam: element<HTMLInputElement>("toggle_drop_exam").checked,
    drop_vitals: element<HTMLInputElement>("toggle_drop_vitals").checked,
  };
}

function narrative(): string {
  return state.form.triage_note || state.form.chief_complaint;
}

function renderView(): void {
  const results = element<HTMLDivElement>("results");
  if (state.view.kind === "prediction") {
    results.innerHTML = renderPrediction(state.view.response, narrative());
  } else if (state.view.kind === "error") {
    results.innerHTML = renderError(state.view.status, state.view.message);
    document.getElementById("retry-btn")?.addEventListener("click", () => void handleSubmit());
  } else {
    results.innerHTML = "";
  }
  const whatifRegion = element<HTMLDivElement>("whatif-results");
  if (state.whatif) {
    whatifRegion.innerHTML = renderWhatif(state.whatif);
  } else if (state.whatifError) {
    whatifRegion.innerHTML = renderError(0, state.whatifError);
  } else {
    whatifRegion.innerHTML = "";
  }
  syncControls();
}

function syncControls(): void {
  element<HTMLButtonElement>("submit-btn").disabled = !canSubmit(state.form, state.pipeline);
  element<HTMLButtonElement>("whatif-btn").disabled = !canExploreWhatif(state);
}

async function handleSubmit(): Promise<void> {
  readForm();
  if (!canSubmit(state.form, state.pipeline)) return;
  element<HTMLDivElement>("results").innerHTML = '<p class="loading">predicting&hellip;</p>';
  state = await submitCase(state, client);
  renderView();
}

async function handleWhatif(): Promise<void> {
  readForm();
  if (!canExploreWhatif(state)) return;
  element<HTMLDivElement>("whatif-results").innerHTML =
    '<p class="loading">comparing&hellip;</p>';
  state = await exploreWhatif(state, client);
  renderView();
}

async function populatePipelines(): Promise<void> {
  try {
    const info = await client.pipelines();
    element<HTMLSelectElement>("pipeline").innerHTML = info.pipelines
      .map((kind) => `<option value="${kind}">${kind.replace(/_/g, " ")}</option>`)
      .join("");
    element<HTMLSelectElement>("strategy").innerHTML = info.strategies
      .filter((s) => s !== "rag" || info.rag_available)
      .map((s) => `<option value="${s}">${s}</option>`)
      .join("");
    element<HTMLParagraphElement>("pack-version").textContent =
      `prompt pack ${info.prompt_pack_version}`;
  } catch {
    element<HTMLParagraphElement>("pack-version").textContent = "service unreachable";
  }
}

export function bootstrap(): void {
  void populatePipelines();
  element<HTMLFormElement>("case-form").addEventListener("submit", (event) => {
    event.preventDefault();
    void handleSubmit();
  });
  element<HTMLButtonElement>("whatif-btn").addEventListener("click", () => void handleWhatif());
  for (const id of [
    "age_months",
    "chief_complaint",
    "vital_signs",
    "physical_exam",
    "pmh",
    "triage_note",
    "pipeline",
    "toggle_drop_exam",
    "toggle_drop_vitals",
  ]) {
    element(id).addEventListener("input", () => {
      readForm();
      syncControls();
    });
  }
  syncControls();
}

if (typeof document !== "undefined" && document.getElementById("case-form")) {
  bootstrap();
}
