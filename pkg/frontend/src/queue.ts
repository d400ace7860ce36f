// Pending-pattern review: the expert's accept / edit / reject loop.
// Rows change only after the server confirms a decision; a 409 marks the
// row as decided elsewhere and reloads the queue.

import { ApiClient } from "./api.js";
import { banner, clear, el } from "./dom.js";
import {
  canSubmitEdit, formatScore, gateVerdictLabel, interpretDecision,
} from "./format.js";
import type { DecisionAction, QueueItem } from "./types.js";

export class QueueView {
  constructor(
    private readonly api: ApiClient,
    private readonly container: HTMLElement,
    private readonly onKbChanged: () => void,
  ) {}

  async refresh(): Promise<void> {
    clear(this.container);
    let items: QueueItem[];
    try {
      items = await this.api.queue("pending");
    } catch (err) {
      this.container.append(banner("error", `Cannot load queue: ${err}`));
      return;
    }
    if (items.length === 0) {
      this.container.append(
        banner("info", "Queue is empty. Run a learning iteration to propose patterns."));
      return;
    }
    for (const item of items) {
      this.container.append(this.renderItem(item));
    }
  }

  private renderItem(item: QueueItem): HTMLElement {
    const verdictClass = item.gate_verdict === "accepted" ? "ok" : "warn";
    const notice = el("div", { class: "item-notice" });
    const text = el("blockquote", {}, item.text);

    const editBox = el("textarea", { class: "edit-box", rows: "3" });
    editBox.value = item.text;
    const saveEdit = el("button", { class: "primary" }, "Save edit");
    const cancelEdit = el("button", {}, "Cancel");
    const editArea = el("div", { class: "edit-area hidden" }, editBox,
      el("div", { class: "row-actions" }, saveEdit, cancelEdit));
    editBox.addEventListener("input", () => {
      saveEdit.toggleAttribute("disabled", !canSubmitEdit(editBox.value));
    });

    const accept = el("button", { class: "primary" }, "Accept");
    const edit = el("button", {}, "Edit");
    const reject = el("button", { class: "danger" }, "Reject");
    const actions = el("div", { class: "row-actions" }, accept, edit, reject);

    const card = el("article", { class: "card" },
      el("img", {
        class: "thumb", src: item.spectrogram_thumbnail_url, loading: "lazy",
        alt: `spectrogram for ${item.species}`,
      }),
      el("div", { class: "card-body" },
        el("header", {},
          el("strong", {}, item.species),
          el("span", { class: `badge ${verdictClass}` },
            gateVerdictLabel(item.gate_verdict)),
          el("span", { class: "badge" }, `quality ${formatScore(item.quality)}`),
          el("span", { class: "badge" }, `novelty ${formatScore(item.novelty)}`),
        ),
        text, notice, actions, editArea,
      ),
    );

    const submit = async (action: DecisionAction, editedText?: string) => {
      for (const button of [accept, edit, reject, saveEdit]) {
        button.setAttribute("disabled", "");
      }
      const result = await this.api.decide(item.id, action, editedText);
      const outcome = interpretDecision(result.status, result.body);
      if (outcome.kind === "committed") {
        card.remove();
        if (outcome.item.status !== "rejected") this.onKbChanged();
        if (this.container.childElementCount === 0) void this.refresh();
      } else if (outcome.kind === "conflict") {
        notice.replaceChildren(banner("warn", outcome.message));
        card.classList.add("conflicted");
        window.setTimeout(() => void this.refresh(), 1200);
      } else {
        notice.replaceChildren(banner("error", outcome.message));
        for (const button of [accept, edit, reject, saveEdit]) {
          button.removeAttribute("disabled");
        }
      }
    };

    accept.addEventListener("click", () => void submit("accept"));
    reject.addEventListener("click", () => void submit("reject"));
    edit.addEventListener("click", () => {
      editArea.classList.toggle("hidden");
      saveEdit.toggleAttribute("disabled", !canSubmitEdit(editBox.value));
    });
    cancelEdit.addEventListener("click", () => editArea.classList.add("hidden"));
    saveEdit.addEventListener("click", () => {
      if (canSubmitEdit(editBox.value)) void submit("edit", editBox.value.trim());
    });
    return card;
  }
}
