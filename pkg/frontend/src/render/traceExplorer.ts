// Trace explorer: per-iteration variance distributions plus the top
// candidate designs of each search iteration. Renders exactly what the
// server sent — the variance arrays arrive pre-downsampled.

import type { SearchTraceDoc, StratumRow, TraceIteration } from "../types.js";
import { el, fmt, svgEl } from "./dom.js";

const PLOT_W = 560;
const PLOT_H = 180;
const PAD = { left: 60, right: 16, top: 12, bottom: 26 };

export function renderTraceExplorer(trace: SearchTraceDoc, strata: StratumRow[]): HTMLElement {
  const root = el("section", { class: "trace-explorer" });
  root.append(el("h2", {}, ["Search trace"]));
  root.append(summaryLine(trace));
  root.append(variancePlot(trace.iterations));
  for (const iteration of trace.iterations) {
    root.append(iterationPanel(iteration, strata));
  }
  root.append(finalDesignTable(trace, strata));
  return root;
}

function summaryLine(trace: SearchTraceDoc): HTMLElement {
  const steps = trace.iterations.map((it) => it.step).join(" → ");
  return el("p", { class: "trace-summary" }, [
    `${trace.iterations.length} iterations (steps ${steps}), `,
    `final variance ${fmt(trace.variance, 5)}`,
  ]);
}

/** Strip plot of candidate variances per iteration, log-free and linear:
 *  positions are pixel arithmetic on server-sent numbers only. */
function variancePlot(iterations: TraceIteration[]): HTMLElement {
  const values = iterations.flatMap((it) => it.variances);
  const finite = values.filter((v) => Number.isFinite(v));
  const wrap = el("figure", { class: "variance-plot" });
  if (finite.length === 0) {
    wrap.append(el("figcaption", {}, ["no finite candidate variances"]));
    return wrap;
  }
  const lo = Math.min(...finite);
  const hi = Math.max(...finite);
  const spanY = hi > lo ? hi - lo : 1;
  const innerW = PLOT_W - PAD.left - PAD.right;
  const innerH = PLOT_H - PAD.top - PAD.bottom;
  const laneW = innerW / iterations.length;

  const svg = svgEl("svg", {
    viewBox: `0 0 ${PLOT_W} ${PLOT_H}`,
    width: String(PLOT_W),
    height: String(PLOT_H),
    role: "img",
    "aria-label": "variance of candidate designs by iteration",
  });
  svg.append(svgEl("line", {
    x1: String(PAD.left), y1: String(PAD.top),
    x2: String(PAD.left), y2: String(PLOT_H - PAD.bottom),
    class: "axis",
  }));
  svg.append(svgEl("line", {
    x1: String(PAD.left), y1: String(PLOT_H - PAD.bottom),
    x2: String(PLOT_W - PAD.right), y2: String(PLOT_H - PAD.bottom),
    class: "axis",
  }));
  for (const [t, frac] of [[lo, 0], [hi, 1]] as const) {
    const y = PLOT_H - PAD.bottom - frac * innerH;
    const label = svgEl("text", {
      x: String(PAD.left - 6), y: String(y + 4),
      "text-anchor": "end", class: "tick",
    });
    label.textContent = fmt(t, 3);
    svg.append(label);
  }
  iterations.forEach((iteration, i) => {
    const cx = PAD.left + laneW * (i + 0.5);
    for (const [j, v] of iteration.variances.entries()) {
      if (!Number.isFinite(v)) continue;
      const jitter = ((j % 11) - 5) * (laneW / 30);
      const cy = PLOT_H - PAD.bottom - ((v - lo) / spanY) * innerH;
      svg.append(svgEl("circle", {
        cx: fmt(cx + jitter, 6), cy: fmt(cy, 6), r: "1.5", class: "candidate",
      }));
    }
    if (iteration.best_variance !== null && Number.isFinite(iteration.best_variance)) {
      const cy = PLOT_H - PAD.bottom - ((iteration.best_variance - lo) / spanY) * innerH;
      svg.append(svgEl("circle", {
        cx: fmt(cx, 6), cy: fmt(cy, 6), r: "4", class: "best",
      }));
    }
    const label = svgEl("text", {
      x: fmt(cx, 6), y: String(PLOT_H - 8), "text-anchor": "middle", class: "tick",
    });
    label.textContent = `s=${iteration.step}`;
    svg.append(label);
  });
  wrap.append(svg);
  wrap.append(el("figcaption", {}, [
    "candidate Var estimates per iteration; the large dot is the incumbent best",
  ]));
  return wrap;
}

function iterationPanel(iteration: TraceIteration, strata: StratumRow[]): HTMLElement {
  const panel = el("details", { class: "iteration", "data-step": String(iteration.step) });
  panel.append(el("summary", {}, [
    `iteration at step ${iteration.step}: ${iteration.rows} candidate designs`
    + (iteration.skipped ? `, ${iteration.skipped} degenerate skipped` : "")
    + `, best Var ${fmt(iteration.best_variance, 5)}`,
  ]));
  const table = el("table", { class: "top-designs" });
  table.append(el("caption", {}, ["top candidate designs"]));
  const head = el("tr", {}, [el("th", {}, ["#"])]);
  for (const s of strata) head.append(el("th", {}, [strumLabel(s)]));
  head.append(el("th", {}, ["Var"]));
  table.append(head);
  iteration.top_designs.forEach((cand, rank) => {
    const row = el("tr", {}, [el("td", {}, [String(rank + 1)])]);
    for (const a of cand.allocation) row.append(el("td", {}, [String(a)]));
    row.append(el("td", {}, [fmt(cand.variance, 5)]));
    table.append(row);
  });
  panel.append(table);
  return panel;
}

function finalDesignTable(trace: SearchTraceDoc, strata: StratumRow[]): HTMLElement {
  const wrap = el("div", { class: "final-design" });
  wrap.append(el("h3", {}, ["Selected design"]));
  const table = el("table", {});
  table.append(el("tr", {}, [
    el("th", {}, ["stratum"]), el("th", {}, ["phase I"]),
    el("th", {}, ["audit"]), el("th", {}, ["probability"]),
  ]));
  trace.design.allocation.forEach((a, k) => {
    const s = strata[k];
    if (!s) return;
    table.append(el("tr", {}, [
      el("td", {}, [strumLabel(s)]),
      el("td", {}, [String(s.count)]),
      el("td", {}, [String(a)]),
      el("td", {}, [fmt(trace.design.pis[k] ?? null, 3)]),
    ]));
  });
  table.append(el("tr", { class: "total" }, [
    el("td", {}, ["total"]),
    el("td", {}, [String(strata.reduce((acc, s) => acc + s.count, 0))]),
    el("td", {}, [String(trace.design.n)]),
    el("td", {}, [""]),
  ]));
  wrap.append(table);
  return wrap;
}

export function strumLabel(s: StratumRow): string {
  return `y*=${s.ystar} x*=${s.xstar} z=${s.z}`;
}
