// Canvas rendering for the benchmark view. Drawing degrades gracefully
// where no 2D context exists (jsdom); the geometry lives in csv.ts.

import { BenchSample, cumulativeSeconds, lineLayout, scatterLayout } from "./csv.js";

export function drawScatter(canvas: HTMLCanvasElement, samples: BenchSample[]): number {
  const points = scatterLayout(samples, canvas.width, canvas.height);
  const ctx = canvas.getContext("2d");
  if (ctx) {
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.strokeStyle = "#888";
    ctx.strokeRect(30, 30, canvas.width - 60, canvas.height - 60);
    ctx.fillStyle = "#3b82f6";
    for (const p of points) {
      ctx.beginPath();
      ctx.arc(p.x, p.y, 2, 0, Math.PI * 2);
      ctx.fill();
    }
  }
  canvas.dataset.points = String(points.length);
  return points.length;
}

export function drawCumulative(canvas: HTMLCanvasElement, samples: BenchSample[]): number {
  const totals = cumulativeSeconds(samples);
  const points = lineLayout(totals, canvas.width, canvas.height);
  const ctx = canvas.getContext("2d");
  if (ctx) {
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.strokeStyle = "#888";
    ctx.strokeRect(30, 30, canvas.width - 60, canvas.height - 60);
    ctx.strokeStyle = "#f59e0b";
    ctx.beginPath();
    points.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
    ctx.stroke();
  }
  canvas.dataset.points = String(points.length);
  canvas.dataset.totalS = totals.length ? totals[totals.length - 1].toFixed(3) : "0";
  return points.length;
}
