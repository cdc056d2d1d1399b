// DOM rendering: charts, banners, version badge, debug panel.
//
// Charts draw the decimated display stream only; there is no client-side
// signal processing. Rendering is a plain projection of DashboardState.

import { DashboardState } from "./state.js";

const WAVE_POINTS = 4000; // ~2 s of display stream per chart width

export interface Elements {
  status: HTMLElement;
  version: HTMLElement;
  wave: HTMLCanvasElement;
  timeline: HTMLCanvasElement;
  banners: HTMLElement;
  debug: HTMLElement;
  latency: HTMLElement;
  buffered: HTMLElement;
}

export function lookupElements(doc: Document): Elements {
  const get = (id: string) => {
    const el = doc.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el;
  };
  return {
    status: get("status"),
    version: get("version"),
    wave: get("wave") as HTMLCanvasElement,
    timeline: get("timeline") as HTMLCanvasElement,
    banners: get("banners"),
    debug: get("debug"),
    latency: get("latency"),
    buffered: get("buffered"),
  };
}

function drawSeries(
  ctx: CanvasRenderingContext2D,
  values: number[],
  color: string,
  yTop: number,
  height: number,
  width: number,
): void {
  if (values.length < 2) return;
  let lo = Math.min(...values);
  let hi = Math.max(...values);
  if (hi - lo < 1e-9) {
    hi = lo + 1;
  }
  ctx.strokeStyle = color;
  ctx.lineWidth = 1;
  ctx.beginPath();
  values.forEach((v, i) => {
    const x = (i / (values.length - 1)) * width;
    const y = yTop + height - ((v - lo) / (hi - lo)) * height;
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
}

export function renderWave(canvas: HTMLCanvasElement, state: DashboardState): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.fillStyle = "#10151c";
  ctx.fillRect(0, 0, width, height);
  const tail = state.samples.slice(-WAVE_POINTS);
  drawSeries(ctx, tail.map((p) => p[0]), "#e8a33d", 4, height / 2 - 8, width);
  drawSeries(ctx, tail.map((p) => p[1]), "#4da3e8", height / 2 + 4, height / 2 - 8, width);
}

export function renderTimeline(canvas: HTMLCanvasElement, state: DashboardState): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.fillStyle = "#10151c";
  ctx.fillRect(0, 0, width, height);
  ctx.strokeStyle = "#2a3442";
  ctx.beginPath();
  ctx.moveTo(0, height / 2);
  ctx.lineTo(width, height / 2);
  ctx.stroke();
  const points = state.timeline;
  points.forEach((p, i) => {
    const x = (i / Math.max(points.length - 1, 1)) * (width - 8) + 4;
    const y = height - 4 - p.pOk * (height - 8);
    ctx.fillStyle = p.label === "OK" ? "#53c27a" : "#e0564f";
    ctx.beginPath();
    ctx.arc(x, y, 3, 0, 2 * Math.PI);
    ctx.fill();
  });
}

export function render(
  els: Elements,
  state: DashboardState,
  dismiss: (id: number) => void,
): void {
  els.status.textContent = state.connected ? "live" : "reconnecting…";
  els.status.className = state.connected ? "status ok" : "status down";
  els.version.textContent =
    state.modelVersion === null ? "model —" : `model v${state.modelVersion}`;
  els.buffered.textContent = `${state.bufferedRecords} buffered windows`;
  const last = state.timeline[state.timeline.length - 1];
  els.latency.textContent = last ? `latency ${last.latencyMs.toFixed(1)} ms` : "";

  renderWave(els.wave, state);
  renderTimeline(els.timeline, state);

  els.banners.replaceChildren(
    ...state.banners.map((b) => {
      const div = document.createElement("div");
      div.className = `banner ${b.kind}`;
      div.textContent = b.text;
      const btn = document.createElement("button");
      btn.textContent = "dismiss";
      btn.onclick = () => dismiss(b.id);
      div.appendChild(btn);
      return div;
    }),
  );

  els.debug.replaceChildren(
    ...state.debugLog.map((line) => {
      const pre = document.createElement("pre");
      pre.textContent = line;
      return pre;
    }),
  );
}
