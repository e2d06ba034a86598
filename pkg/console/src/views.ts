// Pure view builders: API payloads in, view models / HTML strings out.
// Keeping these free of DOM and fetch lets the contract tests run the real
// rendering path headlessly and guarantees the console adds no numbers of
// its own.

import type {
  AnomalySummary,
  InterpretationEntry,
  InterpretationView,
  MatchView,
} from "./types.js";

export interface TableRow {
  feature: string;
  anomalyDisplay: number;
  comparator: "<" | ">" | "=";
  referenceDisplay: number;
  effectiveness: number;
  effectivenessShare: number; // of the largest entry, for the bar width
}

export function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function comparatorFor(e: InterpretationEntry): "<" | ">" | "=" {
  // direction follows the sign of (anomaly - reference)
  if (e.anomaly_value > e.reference_value) return ">";
  if (e.anomaly_value < e.reference_value) return "<";
  return "=";
}

export function interpretationRows(view: InterpretationView): TableRow[] {
  const top = Math.max(...view.entries.map((e) => Math.abs(e.effectiveness)), 1e-12);
  return view.entries.map((e) => ({
    feature: e.feature,
    anomalyDisplay: e.anomaly_display,
    comparator: comparatorFor(e),
    referenceDisplay: e.reference_display,
    effectiveness: e.effectiveness,
    effectivenessShare: Math.max(Math.abs(e.effectiveness) / top, 0),
  }));
}

const fmt = (v: number): string =>
  Math.abs(v) >= 1000 || (v !== 0 && Math.abs(v) < 0.001)
    ? v.toExponential(3)
    : v.toPrecision(4);

export function renderInterpretationTable(view: InterpretationView): string {
  const rows = interpretationRows(view)
    .map(
      (r) => `<tr>
  <td class="feature">${esc(r.feature)}</td>
  <td class="values">${fmt(r.anomalyDisplay)} ${r.comparator} ${fmt(r.referenceDisplay)}</td>
  <td class="effect"><div class="bar" style="width:${(r.effectivenessShare * 100).toFixed(1)}%"></div></td>
</tr>`,
    )
    .join("\n");
  const badge = view.converged
    ? ""
    : `<p class="warn">search did not converge: reference may still score abnormal</p>`;
  return `<table class="interpretation" data-k="${view.k}">
<thead><tr><th>feature</th><th>anomaly &lt;&gt; reference</th><th>effectiveness</th></tr></thead>
<tbody>
${rows}
</tbody>
</table>
${badge}`;
}

export interface MatchBar {
  label: string;
  probability: number; // raw value, deliberately not renormalized
}

export function matchBars(view: MatchView): MatchBar[] {
  return Object.entries(view.probabilities)
    .map(([label, probability]) => ({ label, probability }))
    .sort((a, b) => b.probability - a.probability || a.label.localeCompare(b.label));
}

export function renderMatchPanel(view: MatchView): string {
  const bars = matchBars(view);
  const rows = bars
    .map(
      (b) => `<li>
  <span class="label">${esc(b.label)}</span>
  <div class="bar" style="width:${(b.probability * 100).toFixed(1)}%"></div>
  <span class="prob">${b.probability.toFixed(3)}</span>
</li>`,
    )
    .join("\n");
  const routing =
    view.decision === "UNKNOWN"
      ? `<p class="routing unknown">no matches — unknown threat</p>`
      : view.suppressed
        ? `<p class="routing suppressed">matched NORMAL — alert suppressed</p>`
        : `<p class="routing matched">matched: ${esc(view.decision)}</p>`;
  const drift = view.drift_flagged
    ? `<p class="drift">concept drift flagged (chain score ${view.drift_score.toFixed(3)}) — queued for retraining set</p>`
    : "";
  return `<div class="match-panel" data-anomaly="${esc(view.anomaly_id)}">
${bars.length ? `<ul class="bars">\n${rows}\n</ul>` : `<p class="empty">no stored rules yet</p>`}
${routing}
${drift}
</div>`;
}

export function renderAnomalyCard(a: AnomalySummary): string {
  const ratio = a.threshold > 0 ? a.score / a.threshold : 0;
  return `<article class="card" data-id="${esc(a.id)}" data-received="${a.received_at}">
  <header><span class="id">${esc(a.id)}</span><span class="kind">${esc(a.kind)}</span></header>
  <div class="gauge" title="score ${a.score.toExponential(3)} / threshold ${a.threshold.toExponential(3)}">
    <div class="needle" style="width:${Math.min(ratio * 50, 100).toFixed(1)}%"></div>
  </div>
  <footer>
    <span class="badge status-${a.status}">${a.status}</span>
    ${a.drift_flagged ? `<span class="badge drift">drift</span>` : ""}
    ${a.label ? `<span class="badge label">${esc(a.label)}</span>` : ""}
  </footer>
</article>`;
}

export function renderAnomalyList(items: AnomalySummary[]): string {
  // server order is received-at descending; assert rather than re-sort so a
  // server regression is visible instead of silently patched over
  for (let i = 1; i < items.length; i++) {
    if (items[i - 1].received_at < items[i].received_at) {
      throw new Error("server returned anomalies out of order");
    }
  }
  return items.map(renderAnomalyCard).join("\n");
}

export function labelSuggestions(
  existing: Iterable<string>,
  prefix: string,
): string[] {
  const seen = new Set<string>();
  const out: string[] = [];
  for (const label of existing) {
    const key = label.toLowerCase();
    if (seen.has(key)) continue;
    seen.add(key);
    if (key.startsWith(prefix.toLowerCase()) && label !== "UNKNOWN") {
      out.push(label);
    }
  }
  return out.sort();
}
