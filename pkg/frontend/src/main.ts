import { ApiClient } from "./api.js";
import { ClassifyView } from "./classify.js";
import { KbView } from "./kb.js";
import { LearnView } from "./learn.js";
import { QueueView } from "./queue.js";

const api = new ApiClient();

function section(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

async function refreshStatsLine(): Promise<void> {
  const line = section("stats-line");
  try {
    const stats = await api.stats();
    line.textContent =
      `${stats.total_patterns} patterns / revision ${stats.revision} / ` +
      `${stats.pending_queue} pending review / gate q>` +
      `${stats.gate.quality_threshold} n>${stats.gate.novelty_threshold}`;
  } catch {
    line.textContent = "service unreachable";
  }
}

function setupTabs(): void {
  const buttons = document.querySelectorAll<HTMLButtonElement>("#tabs button");
  buttons.forEach((button) => {
    button.addEventListener("click", () => {
      buttons.forEach((b) => b.classList.toggle("active", b === button));
      document.querySelectorAll<HTMLElement>("main .tab").forEach((tab) => {
        tab.classList.toggle("active", tab.id === `tab-${button.dataset.tab}`);
      });
    });
  });
}

const kbView = new KbView(api, section("tab-kb"));
const queueView = new QueueView(api, section("tab-queue"), () => {
  void kbView.refresh();
  void refreshStatsLine();
});
new ClassifyView(api, section("tab-classify"));
new LearnView(api, section("tab-learn"), () => {
  void queueView.refresh();
  void refreshStatsLine();
});

setupTabs();
void refreshStatsLine();
void queueView.refresh();
void kbView.refresh();
