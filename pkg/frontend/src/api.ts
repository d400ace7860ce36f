// Thin typed client over the /api endpoints. The fetch function is
// injectable so the client is testable without a server.

import type {
  ClassifyResponse, DecisionAction, KbEntry, LearnStatus, QueueItem,
  SpeciesSummary, StatsResponse,
} from "./types.js";

export interface RawResult {
  status: number;
  body: unknown;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
    private readonly base: string = "",
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchFn(this.base + path);
    if (!response.ok) {
      throw new ApiError(response.status, `GET ${path} -> ${response.status}`);
    }
    return (await response.json()) as T;
  }

  private async postRaw(path: string, init: RequestInit): Promise<RawResult> {
    const response = await this.fetchFn(this.base + path, { method: "POST", ...init });
    let body: unknown = null;
    try {
      body = await response.json();
    } catch {
      body = null;
    }
    return { status: response.status, body };
  }

  species(): Promise<SpeciesSummary[]> {
    return this.getJson("/api/species");
  }

  kb(species: string): Promise<KbEntry> {
    return this.getJson(`/api/kb/${encodeURIComponent(species)}`);
  }

  stats(): Promise<StatsResponse> {
    return this.getJson("/api/stats");
  }

  queue(status: string = "pending"): Promise<QueueItem[]> {
    return this.getJson(`/api/queue?status=${encodeURIComponent(status)}`);
  }

  decide(id: string, action: DecisionAction, editedText?: string,
         decidedBy?: string): Promise<RawResult> {
    const payload: Record<string, string> = { action };
    if (editedText !== undefined) payload.edited_text = editedText;
    if (decidedBy !== undefined) payload.decided_by = decidedBy;
    return this.postRaw(`/api/patterns/${encodeURIComponent(id)}/decision`, {
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  classifyText(text: string): Promise<RawResult> {
    return this.postRaw("/api/classify", {
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text }),
    });
  }

  classifyAudio(file: File): Promise<RawResult> {
    const form = new FormData();
    form.append("audio", file);
    return this.postRaw("/api/classify", { body: form });
  }

  triggerIteration(samplesPerSpecies: number, rngSeed: number): Promise<RawResult> {
    return this.postRaw("/api/learn/iteration", {
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ samples_per_species: samplesPerSpecies, rng_seed: rngSeed }),
    });
  }

  learnStatus(): Promise<LearnStatus> {
    return this.getJson("/api/learn/status");
  }
}

export function asClassifyResponse(result: RawResult): ClassifyResponse {
  if (result.status !== 200) {
    const detail = (result.body as { detail?: string; error?: string }) ?? {};
    throw new ApiError(result.status, detail.detail ?? detail.error ?? "classification failed");
  }
  return result.body as ClassifyResponse;
}
