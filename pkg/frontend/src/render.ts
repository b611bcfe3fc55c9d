// Pure HTML-string renderers.  Everything that came from a request or a
// model is escaped; the console shows only values present in server
// responses and never invents a level.

import type { PredictResponse, WhatifEntry } from "./types";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

// Acuity color scale is fixed: 1 red, 2 orange, 3 yellow, 4 light green, 5 green.
export function esiBadge(level: number | null, extraClass = ""): string {
  if (level === null) {
    return `<span class="esi-badge esi-none ${extraClass}">no level</span>`;
  }
  return `<span class="esi-badge esi-${level} ${extraClass}">ESI ${level}</span>`;
}

export function renderSaliencyText(
  text: string,
  saliency: { tokens: string[]; scores: number[] } | null,
): string {
  const escaped = escapeHtml(text);
  if (!saliency || saliency.tokens.length === 0) {
    return escaped;
  }
  const byToken = new Map<string, number>();
  saliency.tokens.forEach((token, i) => byToken.set(token.toLowerCase(), saliency.scores[i] ?? 0));
  return escaped.replace(/[A-Za-z0-9]+/g, (word) => {
    const score = byToken.get(word.toLowerCase());
    if (score === undefined) {
      return word;
    }
    const strength = score >= 0.7 ? "strong" : "mild";
    return `<mark class="saliency-${strength}" title="score ${score.toFixed(2)}">${word}</mark>`;
  });
}

function renderVotes(title: string, votes: { persona: string; level: number | null; rationale: string }[]): string {
  const rows = votes
    .map(
      (vote) => `
      <tr>
        <td>${escapeHtml(vote.persona)}</td>
        <td>${esiBadge(vote.level, "small")}</td>
        <td class="rationale">${escapeHtml(vote.rationale)}</td>
      </tr>`,
    )
    .join("");
  return `
    <h4>${escapeHtml(title)}</h4>
    <table class="votes">
      <thead><tr><th>Persona</th><th>Vote</th><th>Rationale</th></tr></thead>
      <tbody>${rows}</tbody>
    </table>`;
}

function renderPanel(title: string, body: string, open = false): string {
  return `<details class="panel"${open ? " open" : ""}><summary>${escapeHtml(title)}</summary><div>${body}</div></details>`;
}

export function renderPrediction(response: PredictResponse, narrative: string): string {
  const parts: string[] = [];
  if (response.parse_failed) {
    parts.push(
      `<div class="prediction failed"><span class="esi-badge esi-none">unparseable output</span>
       <p>The model's answer could not be read as an ESI level. No level is shown.</p></div>`,
    );
  } else {
    parts.push(
      `<div class="prediction">${esiBadge(response.predicted, "hero")}
       <span class="meta">${escapeHtml(response.pipeline)} &middot; ${escapeHtml(response.strategy)}
       &middot; ${response.latency_seconds.toFixed(2)}s &middot; ${escapeHtml(response.backend_id)}</span></div>`,
    );
  }
  if (narrative.trim()) {
    parts.push(
      `<div class="narrative">${renderSaliencyText(narrative, response.saliency)}</div>`,
    );
  }
  const vignette = response.intermediates.vignette;
  if (vignette) {
    parts.push(
      renderPanel(
        `Clinical vignette (${vignette.derived_from})`,
        `<p>${renderSaliencyText(vignette.text, response.saliency)}</p>`,
        true,
      ),
    );
  }
  const structured = response.intermediates.structured;
  if (structured) {
    parts.push(
      renderPanel(
        `Structured fields (${structured.source})`,
        `<dl>
          <dt>Chief complaint</dt><dd>${escapeHtml(structured.chief_complaint)}</dd>
          <dt>Vital signs</dt><dd>${escapeHtml(structured.vital_signs)}</dd>
          <dt>Physical exam</dt><dd>${escapeHtml(structured.physical_exam)}</dd>
        </dl>`,
      ),
    );
  }
  if (response.ensemble) {
    const votes = [renderVotes("Round 1", response.ensemble.round1)];
    if (response.ensemble.rounds === 2) {
      votes.push(renderVotes("Final (after debate)", response.ensemble.final));
    }
    parts.push(renderPanel(`Ensemble votes (${response.ensemble.n_agents} agents)`, votes.join(""), true));
  }
  if (response.rag && response.rag.length) {
    const items = response.rag
      .map(
        (row) =>
          `<li><span class="score">${row.score.toFixed(3)}</span> ${escapeHtml(row.text ?? `passage ${row.passage_id}`)}</li>`,
      )
      .join("");
    parts.push(renderPanel("Retrieved guideline passages", `<ol>${items}</ol>`));
  }
  if (response.raw_model_text.trim()) {
    parts.push(renderPanel("Raw model output", `<pre>${escapeHtml(response.raw_model_text)}</pre>`));
  }
  return `<div class="result">${parts.join("\n")}</div>`;
}

export function renderError(status: number, message: string): string {
  const label = status ? `Server error (${status})` : "Request failed";
  return `
    <div class="result error-box" role="alert">
      <strong>${escapeHtml(label)}</strong>
      <p>${escapeHtml(message)}</p>
      <button type="button" id="retry-btn" class="retry">Retry</button>
    </div>`;
}

const ABLATION_LABELS: Record<string, string> = {
  none: "Complete",
  drop_exam: "Without physical exam",
  drop_vitals: "Without vital signs",
};

export function renderWhatif(entries: WhatifEntry[]): string {
  const baseline = entries[0]?.response?.predicted ?? null;
  const columns = entries
    .map((entry, i) => {
      const label = ABLATION_LABELS[entry.ablation] ?? entry.ablation;
      if (entry.error) {
        return `
        <div class="whatif-col" data-ablation="${escapeHtml(entry.ablation)}">
          <h4>${escapeHtml(label)}</h4>
          <div class="error-box"><strong>Error (${entry.error.status})</strong>
          <p>${escapeHtml(entry.error.error)}</p></div>
        </div>`;
      }
      const level = entry.response?.predicted ?? null;
      const changed = i > 0 && !entry.response?.parse_failed && level !== baseline;
      const badge = changed
        ? `<span class="delta-badge" title="differs from baseline">changed: ${baseline ?? "?"} &rarr; ${level ?? "?"}</span>`
        : "";
      return `
      <div class="whatif-col${changed ? " changed" : ""}" data-ablation="${escapeHtml(entry.ablation)}">
        <h4>${escapeHtml(label)}</h4>
        ${esiBadge(entry.response?.parse_failed ? null : level)}
        ${badge}
      </div>`;
    })
    .join("");
  return `<div class="whatif-grid" data-columns="${entries.length}">${columns}</div>`;
}
