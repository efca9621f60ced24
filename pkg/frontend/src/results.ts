import type { BoxOut, FinalOut, TimingOut } from "./api.js";
import { formatMs, formatPercent, rankDistribution } from "./format.js";

export interface ResultView {
  id: string;
  final: FinalOut;
  distribution: Record<string, number>;
  per_model: Record<string, Record<string, number>>;
  boxes: BoxOut[];
  timing_ms: TimingOut;
  filename?: string;
  resolution?: string;
  received_at?: string;
}

const TIMING_ROWS: Array<[keyof TimingOut, string]> = [
  ["decode", "decode"],
  ["detect", "detection"],
  ["classify", "classification"],
  ["vote", "voting"],
  ["visualize", "visualization"],
  ["encode", "encode"],
  ["total", "total"],
];

function probRow(label: string, probability: number, decided: boolean): HTMLElement {
  const row = document.createElement("div");
  row.className = decided ? "prob-row decided" : "prob-row";
  row.dataset.label = label;
  row.dataset.probability = String(probability);

  const name = document.createElement("span");
  name.className = "prob-label";
  name.textContent = label;

  const track = document.createElement("span");
  track.className = "prob-track";
  const bar = document.createElement("span");
  bar.className = "prob-bar";
  bar.style.width = `${(probability * 100).toFixed(2)}%`;
  track.appendChild(bar);

  const value = document.createElement("span");
  value.className = "prob-value";
  value.textContent = formatPercent(probability);

  row.append(name, track, value);
  return row;
}

export function renderResults(root: HTMLElement, view: ResultView): void {
  root.innerHTML = "";

  const verdict = document.createElement("p");
  verdict.className = "verdict";
  verdict.textContent =
    `${view.final.label} (${formatPercent(view.final.probability)})`;
  root.appendChild(verdict);

  if (view.filename || view.resolution) {
    const meta = document.createElement("p");
    meta.className = "result-meta";
    meta.textContent = [view.filename, view.resolution, view.received_at]
      .filter(Boolean)
      .join(" · ");
    root.appendChild(meta);
  }

  const bars = document.createElement("div");
  bars.className = "prob-list";
  for (const { label, probability } of rankDistribution(view.distribution)) {
    bars.appendChild(probRow(label, probability, label === view.final.label));
  }
  root.appendChild(bars);

  const perModel = document.createElement("details");
  perModel.className = "per-model";
  const summary = document.createElement("summary");
  summary.textContent = `per-model breakdown (${Object.keys(view.per_model).length})`;
  perModel.appendChild(summary);
  for (const member of Object.keys(view.per_model).sort()) {
    const block = document.createElement("div");
    block.className = "member-block";
    block.dataset.model = member;
    const title = document.createElement("h4");
    title.textContent = member;
    block.appendChild(title);
    for (const { label, probability } of rankDistribution(view.per_model[member])) {
      block.appendChild(probRow(label, probability, false));
    }
    perModel.appendChild(block);
  }
  root.appendChild(perModel);

  const timing = document.createElement("table");
  timing.className = "timing";
  const body = document.createElement("tbody");
  for (const [key, title] of TIMING_ROWS) {
    const tr = document.createElement("tr");
    const name = document.createElement("td");
    name.textContent = title;
    const val = document.createElement("td");
    val.textContent = formatMs(view.timing_ms[key]);
    tr.append(name, val);
    body.appendChild(tr);
  }
  timing.appendChild(body);
  root.appendChild(timing);
}
