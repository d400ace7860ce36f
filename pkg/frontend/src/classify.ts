// Classification panel: upload a WAV or paste a pattern text, read the
// ranked species with the three weighted score components as stacked bars.

import { ApiClient, asClassifyResponse } from "./api.js";
import { banner, clear, el } from "./dom.js";
import { formatScore, needsUnparsedBadge, scoreBarWidths } from "./format.js";
import type { ClassifyResponse } from "./types.js";

export class ClassifyView {
  private readonly results: HTMLElement;

  constructor(private readonly api: ApiClient,
              private readonly container: HTMLElement) {
    this.results = el("div", { class: "results" });
    this.container.append(this.buildForm(), this.results);
  }

  private buildForm(): HTMLElement {
    const textInput = el("textarea", {
      rows: "3",
      placeholder: "Pattern text, e.g. \"pulsed patterns at 2-3 khz with 5 pulses per second\"",
    });
    const classifyText = el("button", { class: "primary" }, "Classify text");
    const fileInput = el("input", { type: "file", accept: ".wav,audio/wav" });
    const classifyFile = el("button", { class: "primary" }, "Classify recording");

    classifyText.addEventListener("click", () => {
      const text = textInput.value.trim();
      if (!text) {
        this.results.replaceChildren(banner("warn", "Enter a pattern text first."));
        return;
      }
      void this.run(() => this.api.classifyText(text));
    });
    classifyFile.addEventListener("click", () => {
      const file = fileInput.files?.[0];
      if (!file) {
        this.results.replaceChildren(banner("warn", "Choose a WAV file first."));
        return;
      }
      void this.run(() => this.api.classifyAudio(file));
    });

    return el("div", { class: "classify-form" },
      el("div", { class: "field" }, textInput, classifyText),
      el("div", { class: "field" }, fileInput, classifyFile),
    );
  }

  private async run(call: () => Promise<{ status: number; body: unknown }>):
      Promise<void> {
    this.results.replaceChildren(banner("info", "Classifying..."));
    const raw = await call();
    if (raw.status === 409) {
      this.results.replaceChildren(
        banner("warn", "Knowledge base is empty: seed or learn first."));
      return;
    }
    let response: ClassifyResponse;
    try {
      response = asClassifyResponse(raw);
    } catch (err) {
      this.results.replaceChildren(banner("error", String(err)));
      return;
    }
    this.render(response);
  }

  private render(response: ClassifyResponse): void {
    clear(this.results);
    const head = el("div", { class: "predicted" },
      "Predicted: ", el("strong", {}, response.predicted),
      el("span", { class: "badge" }, `KB revision ${response.revision}`));
    if (needsUnparsedBadge(response)) {
      head.append(el("span", { class: "badge warn" }, "unparsed reply"));
    }
    this.results.append(
      head,
      el("p", { class: "query-echo" }, `Query pattern: ${response.query_pattern}`),
      this.renderRanked(response),
      el("p", { class: "legend" },
        el("span", { class: "key key-max" }, "0.6 x best match"),
        el("span", { class: "key key-mean" }, "0.3 x mean match"),
        el("span", { class: "key key-div" }, "0.1 x diversity")),
    );
  }

  private renderRanked(response: ClassifyResponse): HTMLElement {
    const scale = Math.max(...response.ranked.map((r) => r.total), 0);
    const list = el("div", { class: "ranked" });
    for (const score of response.ranked) {
      const widths = scoreBarWidths(score, scale);
      list.append(el("div", { class: "ranked-row" },
        el("span", { class: "ranked-name" }, score.species),
        el("div", { class: "bar-track" },
          el("div", { class: "bar bar-max", style: `width:${widths.max}%` }),
          el("div", { class: "bar bar-mean", style: `width:${widths.mean}%` }),
          el("div", { class: "bar bar-div", style: `width:${widths.diversity}%` }),
        ),
        el("span", { class: "ranked-total" }, formatScore(score.total)),
      ));
    }
    return list;
  }
}
