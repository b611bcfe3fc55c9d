// Mirrors the service's versioned JSON schema (data/service_schema.json).
// The console displays only what the server returns; it never computes an
// ESI level client-side.

export type PipelineKind =
  | "note_to_esi"
  | "note_to_vignette_to_esi"
  | "human_structured_to_esi"
  | "note_to_structured_to_esi"
  | "human_structured_to_vignette_to_esi"
  | "model_structured_to_vignette_to_esi";

export type AblationKind = "none" | "drop_vitals" | "drop_exam";

export interface EncounterForm {
  id?: string;
  age_months: number | null;
  chief_complaint: string;
  vital_signs: string;
  physical_exam: string;
  pivot_assessment?: string;
  pmh: string;
  triage_note: string;
  nurse_esi?: number | null;
}

export interface StrategyChoice {
  kind: "plain" | "ensemble" | "rag";
  n_agents?: number;
  rounds?: number;
  k?: number;
}

export interface PredictRequest {
  encounter: Record<string, unknown>;
  pipeline: PipelineKind;
  ablation?: AblationKind;
  strategy?: StrategyChoice;
  backend?: string;
}

export interface AgentVoteView {
  persona: string;
  level: number | null;
  rationale: string;
}

export interface PredictResponse {
  schema_version: string;
  pipeline: string;
  ablation: string;
  strategy: string;
  predicted: number | null;
  parse_failed: boolean;
  intermediates: {
    structured?: {
      chief_complaint: string;
      vital_signs: string;
      physical_exam: string;
      source: string;
    };
    vignette?: { text: string; derived_from: string };
  };
  ensemble: {
    n_agents: number;
    rounds: number;
    round1: AgentVoteView[];
    final: AgentVoteView[];
  } | null;
  rag:
    | { passage_id: number; score: number; text?: string; source_section?: string | null }[]
    | null;
  saliency: { tokens: string[]; scores: number[] } | null;
  raw_model_text: string;
  latency_seconds: number;
  backend_id: string;
  prompt_pack_version: string;
}

export interface WhatifEntry {
  ablation: string;
  response?: PredictResponse;
  error?: { status: number; error: string };
}

export interface PipelinesInfo {
  schema_version: string;
  pipelines: string[];
  ablations: string[];
  strategies: string[];
  backends: string[];
  default_backend: string;
  rag_available: boolean;
  prompt_pack_version: string;
}
