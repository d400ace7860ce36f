// Learning trigger: start one review-mode iteration and poll its status
// every 2 s until the proposals land in the queue.

import { ApiClient } from "./api.js";
import { banner, clear, el } from "./dom.js";
import type { IterationReport } from "./types.js";

const POLL_MS = 2000;

export class LearnView {
  private readonly status: HTMLElement;
  private timer: number | null = null;

  constructor(private readonly api: ApiClient,
              private readonly container: HTMLElement,
              private readonly onFinished: () => void) {
    this.status = el("div", { class: "learn-status" });
    this.container.append(this.buildForm(), this.status);
  }

  private buildForm(): HTMLElement {
    const samples = el("input", { type: "number", value: "1", min: "1" });
    const seed = el("input", { type: "number", value: "0" });
    const start = el("button", { class: "primary" }, "Run one iteration");
    start.addEventListener("click", () => void this.trigger(
      Number(samples.value) || 1, Number(seed.value) || 0));
    return el("div", { class: "learn-form" },
      el("label", {}, "samples per species ", samples),
      el("label", {}, "seed ", seed),
      start);
  }

  private async trigger(samplesPerSpecies: number, seed: number): Promise<void> {
    const result = await this.api.triggerIteration(samplesPerSpecies, seed);
    if (result.status === 409) {
      this.status.replaceChildren(
        banner("warn", "An iteration is already running."));
      this.poll();
      return;
    }
    if (result.status !== 202) {
      const detail = (result.body as { detail?: string })?.detail ?? result.status;
      this.status.replaceChildren(banner("error", `Cannot start: ${detail}`));
      return;
    }
    this.status.replaceChildren(banner("info", "Iteration running..."));
    this.poll();
  }

  private poll(): void {
    if (this.timer !== null) return;
    const tick = async () => {
      const status = await this.api.learnStatus();
      if (status.running) {
        this.timer = window.setTimeout(tick, POLL_MS);
        return;
      }
      this.timer = null;
      if (status.last_error) {
        this.status.replaceChildren(
          banner("error", `Iteration failed: ${status.last_error}`));
      } else if (status.last_report) {
        this.renderReport(status.last_report);
      }
      this.onFinished();
    };
    this.timer = window.setTimeout(tick, POLL_MS);
  }

  private renderReport(report: IterationReport): void {
    clear(this.status);
    this.status.append(
      banner("info", "Iteration finished; candidates are in the review queue."),
      el("ul", { class: "report" },
        el("li", {}, `proposed: ${report.proposed}`),
        el("li", {}, `gate-accepted: ${report.accepted}`),
        el("li", {}, `rejected (quality): ${report.rejected_quality}`),
        el("li", {}, `rejected (novelty): ${report.rejected_novelty}`),
        el("li", {}, `failed samples: ${report.failed}`)));
  }
}
