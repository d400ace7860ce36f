// Knowledge-base browser: species list with counts, per-species patterns.

import { ApiClient } from "./api.js";
import { banner, clear, el } from "./dom.js";
import { formatScore } from "./format.js";

export class KbView {
  private readonly speciesList: HTMLElement;
  private readonly detail: HTMLElement;

  constructor(private readonly api: ApiClient,
              private readonly container: HTMLElement) {
    this.speciesList = el("div", { class: "species-list" });
    this.detail = el("div", { class: "species-detail" });
    this.container.append(this.speciesList, this.detail);
  }

  async refresh(): Promise<void> {
    clear(this.speciesList);
    clear(this.detail);
    let rows;
    try {
      rows = await this.api.species();
    } catch (err) {
      this.speciesList.append(banner("error", `Cannot load species: ${err}`));
      return;
    }
    for (const row of rows) {
      const button = el("button", { class: "species-button" },
        `${row.name} (${row.pattern_count})`);
      button.addEventListener("click", () => void this.show(row.name));
      this.speciesList.append(button);
    }
  }

  private async show(species: string): Promise<void> {
    clear(this.detail);
    const entry = await this.api.kb(species);
    const table = el("table", { class: "patterns" },
      el("thead", {}, el("tr", {},
        el("th", {}, "pattern"), el("th", {}, "provenance"),
        el("th", {}, "quality"), el("th", {}, "iteration"))));
    const body = el("tbody");
    for (const pattern of entry.patterns) {
      body.append(el("tr", {},
        el("td", {}, pattern.text),
        el("td", {}, el("span", { class: `badge prov-${pattern.provenance}` },
          pattern.provenance)),
        el("td", {}, formatScore(pattern.quality)),
        el("td", {}, String(pattern.created_iteration))));
    }
    table.append(body);
    this.detail.append(el("h3", {}, species), table);
  }
}
