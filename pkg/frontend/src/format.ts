// Pure presentation logic, kept DOM-free so it is unit-testable.

import type { ClassifyResponse, DecisionResponse, QueueItem, SpeciesScore } from "./types.js";

export interface ScoreComponents {
  max: number;
  mean: number;
  diversity: number;
}

// The three weighted slices of a species score. They always sum to the
// server's total (the server owns the 0.6/0.3/0.1 weighting; these factors
// only decompose its own ranked payload for display).
export function weightedComponents(score: SpeciesScore): ScoreComponents {
  return {
    max: 0.6 * score.max_sim,
    mean: 0.3 * score.mean_sim,
    diversity: 0.1 * score.diversity,
  };
}

// Segment widths in percent of the row, where `scale` is the largest total
// in the ranked list (the top row fills the track).
export function scoreBarWidths(score: SpeciesScore, scale: number): ScoreComponents {
  const safe = scale > 0 ? scale : 1;
  const parts = weightedComponents(score);
  return {
    max: (100 * parts.max) / safe,
    mean: (100 * parts.mean) / safe,
    diversity: (100 * parts.diversity) / safe,
  };
}

export function canSubmitEdit(text: string): boolean {
  return text.trim().length > 0;
}

export function gateVerdictLabel(verdict: string): string {
  if (verdict === "accepted") return "gate: accepted";
  if (verdict === "rejected:low_quality") return "gate: rejected (low quality)";
  if (verdict === "rejected:low_novelty") return "gate: rejected (low novelty)";
  return `gate: ${verdict}`;
}

export function needsUnparsedBadge(response: ClassifyResponse): boolean {
  return response.unparsed === true;
}

export function formatScore(x: number): string {
  return x.toFixed(3);
}

export function formatTimestamp(seconds: number | null): string {
  if (seconds === null) return "";
  return new Date(seconds * 1000).toISOString().replace("T", " ").slice(0, 19);
}

export type DecisionOutcome =
  | { kind: "committed"; item: QueueItem; revision: number }
  | { kind: "conflict"; message: string }
  | { kind: "error"; message: string };

// Maps a decision POST result onto what the queue view must do: commit the
// row, flag it as decided elsewhere, or surface an error. The UI reflects
// committed state only on a 200 (no optimistic commit).
export function interpretDecision(status: number, body: unknown): DecisionOutcome {
  if (status === 200) {
    const payload = body as DecisionResponse;
    return { kind: "committed", item: payload.item, revision: payload.revision };
  }
  if (status === 409) {
    return { kind: "conflict", message: "Already decided elsewhere" };
  }
  const detail = (body as { detail?: string; error?: string }) ?? {};
  return { kind: "error", message: detail.detail ?? detail.error ?? `HTTP ${status}` };
}
