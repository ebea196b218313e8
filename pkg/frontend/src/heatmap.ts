// Scrolling attention heatmap: target steps along x, context frames along
// y, clip boundaries as horizontal lines, resume markers as ticks.

import type { HeatmapRow } from "./state.js";

function colormap(v: number): [number, number, number] {
  // dark blue -> yellow
  const t = Math.max(0, Math.min(1, v));
  return [Math.round(255 * Math.sqrt(t)),
          Math.round(220 * t),
          Math.round(90 * (1 - t) + 40)];
}

export function drawHeatmap(canvas: HTMLCanvasElement, rows: HeatmapRow[],
                            nContext: number, boundaries: number[][]): void {
  const ctx = canvas.getContext("2d");
  if (!ctx || nContext === 0) return;
  const w = canvas.width;
  const h = canvas.height;
  ctx.fillStyle = "#10141c";
  ctx.fillRect(0, 0, w, h);
  if (rows.length === 0) return;

  const cellW = w / rows.length;
  const cellH = h / nContext;
  const img = rows.length * nContext < 120_000;
  for (let i = 0; i < rows.length; i++) {
    const weights = rows[i].weights;
    // normalize by row max so sparse peaks stay visible
    let max = 0;
    for (const v of weights) max = Math.max(max, v);
    for (let u = 0; u < Math.min(weights.length, nContext); u++) {
      const [r, g, b] = colormap(max > 0 ? weights[u] / max : 0);
      ctx.fillStyle = `rgb(${r},${g},${b})`;
      ctx.fillRect(i * cellW, h - (u + 1) * cellH,
                   Math.ceil(cellW), Math.ceil(cellH));
    }
    if (rows[i].resumeMarker) {
      ctx.fillStyle = "#ff5470";
      ctx.fillRect(i * cellW, 0, Math.max(1, cellW * 0.5), h);
    }
  }
  void img;
  // context clip boundaries (skip the outer edges)
  ctx.strokeStyle = "rgba(255,255,255,0.7)";
  ctx.setLineDash([4, 3]);
  for (const [, end] of boundaries.slice(0, -1)) {
    const y = h - end * cellH;
    ctx.beginPath();
    ctx.moveTo(0, y);
    ctx.lineTo(w, y);
    ctx.stroke();
  }
  ctx.setLineDash([]);
}

export function hoverInfo(canvas: HTMLCanvasElement, rows: HeatmapRow[],
                          nContext: number, x: number, y: number,
                          ): { t: number; u: number; weight: number } | null {
  if (rows.length === 0 || nContext === 0) return null;
  const i = Math.floor((x / canvas.width) * rows.length);
  const u = Math.floor(((canvas.height - y) / canvas.height) * nContext);
  if (i < 0 || i >= rows.length || u < 0 || u >= nContext) return null;
  const row = rows[i];
  return { t: row.t, u, weight: row.weights[u] ?? 0 };
}
