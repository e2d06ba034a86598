// DOM wiring for the analyst console. All state lives on the server; this
// file only fetches, renders and posts. Feedback updates re-fetch the match
// panel in place — no page reload.

import { ApiClient, ApiError } from "./api.js";
import {
  labelSuggestions,
  renderAnomalyList,
  renderInterpretationTable,
  renderMatchPanel,
} from "./views.js";

const NORMAL = "NORMAL";

export class ConsoleApp {
  private selected: string | null = null;
  private knownLabels = new Set<string>();

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
  ) {}

  async start(): Promise<void> {
    this.root.innerHTML = `
      <aside id="queue"><h2>anomalies</h2><div id="cards"></div></aside>
      <main id="detail">
        <section id="interpretation"><h2>interpretation</h2><div id="table"></div></section>
        <section id="match"><h2>matches</h2><div id="panel"></div></section>
        <section id="feedback">
          <h2>feedback</h2>
          <input id="label" list="label-options" placeholder="label (free text)" />
          <datalist id="label-options"></datalist>
          <button id="submit">label</button>
          <button id="suppress">mark NORMAL (suppress)</button>
        </section>
        <p id="error" class="error" hidden></p>
      </main>`;
    this.bind();
    await this.refreshQueue();
  }

  private el<T extends HTMLElement>(id: string): T {
    const node = this.root.querySelector<T>(`#${id}`);
    if (!node) throw new Error(`missing element #${id}`);
    return node;
  }

  private bind(): void {
    this.el<HTMLDivElement>("cards").addEventListener("click", (ev) => {
      const card = (ev.target as HTMLElement).closest<HTMLElement>(".card");
      if (card?.dataset.id) void this.review(card.dataset.id);
    });
    this.el<HTMLButtonElement>("submit").addEventListener("click", () => {
      const label = this.el<HTMLInputElement>("label").value.trim();
      if (label) void this.submitFeedback(label);
    });
    this.el<HTMLButtonElement>("suppress").addEventListener("click", () => {
      void this.submitFeedback(NORMAL);
    });
    this.el<HTMLInputElement>("label").addEventListener("input", (ev) => {
      const prefix = (ev.target as HTMLInputElement).value;
      this.el<HTMLDataListElement>("label-options").innerHTML =
        labelSuggestions(this.knownLabels, prefix)
          .map((l) => `<option value="${l}"></option>`)
          .join("");
    });
  }

  private showError(message: string): void {
    const box = this.el<HTMLParagraphElement>("error");
    box.textContent = message;
    box.hidden = false;
  }

  private clearError(): void {
    this.el<HTMLParagraphElement>("error").hidden = true;
  }

  async refreshQueue(): Promise<void> {
    try {
      const items = await this.api.listAnomalies();
      this.el<HTMLDivElement>("cards").innerHTML = renderAnomalyList(items);
      for (const item of items) if (item.label) this.knownLabels.add(item.label);
    } catch (err) {
      this.showError(err instanceof Error ? err.message : String(err));
    }
  }

  async review(id: string): Promise<void> {
    this.clearError();
    this.selected = id;
    try {
      const interp = await this.api.interpretation(id);
      this.el<HTMLDivElement>("table").innerHTML =
        renderInterpretationTable(interp);
      await this.refreshMatch();
    } catch (err) {
      this.showError(err instanceof Error ? err.message : String(err));
    }
  }

  async refreshMatch(): Promise<void> {
    if (!this.selected) return;
    const match = await this.api.match(this.selected);
    for (const label of Object.keys(match.probabilities)) {
      this.knownLabels.add(label);
    }
    this.el<HTMLDivElement>("panel").innerHTML = renderMatchPanel(match);
  }

  async submitFeedback(label: string): Promise<void> {
    if (!this.selected) return;
    this.clearError();
    try {
      await this.api.feedback(this.selected, label);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        const ok =
          typeof confirm === "function"
            ? confirm(`${err.detail}\nOverwrite the existing label?`)
            : false;
        if (!ok) {
          this.showError(err.detail);
          return;
        }
        await this.api.feedback(this.selected, label, true);
      } else {
        this.showError(err instanceof Error ? err.message : String(err));
        return;
      }
    }
    this.knownLabels.add(label);
    // the new rule must be visible immediately: re-fetch match in place
    await this.refreshMatch();
    await this.refreshQueue();
  }
}

declare global {
  interface Window {
    DEEPAID_BASE_URL?: string;
  }
}

if (typeof document !== "undefined") {
  const base = window.DEEPAID_BASE_URL ?? "http://127.0.0.1:8340";
  const root = document.getElementById("app");
  if (root) {
    void new ConsoleApp(new ApiClient(base), root).start();
  }
}
