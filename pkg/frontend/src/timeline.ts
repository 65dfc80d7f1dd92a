// DOM rendering: a deterministic projection of ViewState.

import type { ViewState } from "./state.js";

function lane(doc: Document, name: string, cells: { label: string; cls: string }[]) {
  const tr = doc.createElement("tr");
  tr.className = `lane lane-${name}`;
  const th = doc.createElement("th");
  th.textContent = name;
  tr.appendChild(th);
  for (const cell of cells) {
    const td = doc.createElement("td");
    td.className = `cell ${cell.cls}`;
    td.textContent = cell.label;
    tr.appendChild(td);
  }
  return tr;
}

export function renderTimeline(state: ViewState, doc: Document): HTMLElement {
  const root = doc.createElement("div");
  root.className = "timeline";

  const banner = doc.createElement("div");
  banner.className = `floor-banner floor-${state.floor}`;
  banner.setAttribute("data-floor", state.floor);
  banner.textContent = `floor: ${state.floor}`;
  root.appendChild(banner);

  const latency = doc.createElement("div");
  latency.className = "latency";
  const stop = state.stopLatencyMs === null ? "–" : `${state.stopLatencyMs} ms`;
  const respond =
    state.respondLatencyMs === null ? "–" : `${state.respondLatencyMs} ms`;
  latency.setAttribute("data-stop-ms", String(state.stopLatencyMs ?? ""));
  latency.setAttribute("data-respond-ms", String(state.respondLatencyMs ?? ""));
  latency.textContent = `stop: ${stop} · respond: ${respond}`;
  root.appendChild(latency);

  const table = doc.createElement("table");
  table.className = "lanes";
  table.appendChild(lane(doc, "user", state.userLane));
  table.appendChild(lane(doc, "text", state.textLane));
  table.appendChild(lane(doc, "audio", state.audioLane));
  root.appendChild(table);

  if (state.errors.length) {
    const err = doc.createElement("div");
    err.className = "errors";
    err.textContent = state.errors.join(" | ");
    root.appendChild(err);
  }
  return root;
}
