// API types mirroring docs/api_schema.json. The UI never invents fields:
// everything rendered comes from these server payloads.

export interface SpeciesSummary {
  name: string;
  pattern_count: number;
}

export interface PatternInfo {
  id: string;
  text: string;
  provenance: "fixed_seed" | "vlm_learned" | "expert_edited";
  quality: number;
  admission_novelty: number | null;
  created_iteration: number;
}

export interface KbEntry {
  species: string;
  patterns: PatternInfo[];
}

export type QueueStatus = "pending" | "accepted" | "rejected" | "edited";

export interface QueueItem {
  id: string;
  species: string;
  text: string;
  quality: number;
  novelty: number;
  gate_verdict: string;
  iteration: number;
  status: QueueStatus;
  decided_by: string | null;
  decided_at: number | null;
  committed_pattern_id: string | null;
  spectrogram_thumbnail_url: string;
}

export interface SpeciesScore {
  species: string;
  max_sim: number;
  mean_sim: number;
  diversity: number;
  total: number;
}

export interface ClassifyResponse {
  predicted: string;
  query_pattern: string;
  revision: number;
  ranked: SpeciesScore[];
  unparsed?: boolean;
}

export interface StatsResponse {
  revision: number;
  total_patterns: number;
  per_species_counts: Record<string, number>;
  per_provenance_counts: Record<string, number>;
  gate: { quality_threshold: number; novelty_threshold: number };
  pending_queue: number;
}

export interface IterationReport {
  iteration: number;
  proposed: number;
  accepted: number;
  rejected_quality: number;
  rejected_novelty: number;
  failed: number;
  kb_size_after: number;
  per_species: Record<string, {
    proposed: number;
    accepted: number;
    rejected_quality: number;
    rejected_novelty: number;
    failed: number;
  }>;
}

export interface LearnStatus {
  running: boolean;
  last_report: IterationReport | null;
  last_error: string | null;
}

export type DecisionAction = "accept" | "reject" | "edit";

export interface DecisionResponse {
  item: QueueItem;
  revision: number;
}
