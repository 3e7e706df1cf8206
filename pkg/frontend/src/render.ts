/**
 * DOM rendering: a pure function of ViewState.  Each call rebuilds the plot
 * grid from scratch; interaction handlers are attached by the caller through
 * the hooks argument so this module stays free of session state.
 */
import { computeBars } from "./bars.js";
import type { FrameCell } from "./protocol.js";
import type { PlotState, ViewState } from "./state.js";

export const PLOT_WIDTH = 320;
export const PLOT_HEIGHT = 140;

export interface RenderHooks {
  onBrush(dim: string, x0px: number, x1px: number): void;
  onBarClick(dim: string, cell: FrameCell): void;
}

function fmt(value: number | null): string {
  if (value === null) return "–";
  if (!isFinite(value)) return "∞";
  return value.toFixed(3);
}

function metricsStrip(plot: PlotState): HTMLElement {
  const strip = document.createElement("div");
  strip.className = "metrics";
  const m = plot.metrics;
  strip.textContent =
    `deviance ${fmt(m.plot_ad)} · entropy ${fmt(m.plot_entropy)} · ` +
    `entropy change ${fmt(m.plot_rec)} · gain potential ${fmt(m.plot_igp)} · ` +
    `${plot.elapsedMs.toFixed(1)} ms`;
  return strip;
}

function renderPlot(plot: PlotState, hooks: RenderHooks): HTMLElement {
  const box = document.createElement("div");
  box.className = "plot" + (plot.pending ? " pending" : "");
  box.dataset.dim = plot.dim;

  const title = document.createElement("h3");
  title.textContent = plot.dim + (plot.lastKind === "refine" ? " ⟳" : "");
  box.appendChild(title);

  const area = document.createElement("div");
  area.className = "plot-area";
  area.style.width = `${PLOT_WIDTH}px`;
  area.style.height = `${PLOT_HEIGHT}px`;

  for (const bar of computeBars(plot.cells, PLOT_WIDTH, PLOT_HEIGHT)) {
    const el = document.createElement("div");
    el.className = "bar" + (bar.cell.level === "base" ? " base" : "");
    el.style.left = `${bar.x}px`;
    el.style.width = `${Math.max(bar.width - 1, 1)}px`;
    el.style.top = `${bar.y}px`;
    el.style.height = `${Math.max(bar.height, 1)}px`;
    el.title =
      `[${bar.cell.x0}, ${bar.cell.x1}) level ${bar.cell.level}: ${bar.cell.y}` +
      (bar.cell.level === "base" ? " (already at full resolution)" : "");
    el.addEventListener("click", (ev) => {
      ev.stopPropagation();
      hooks.onBarClick(plot.dim, bar.cell);
    });
    area.appendChild(el);
  }

  if (plot.brush) {
    const cells = plot.cells;
    if (cells.length > 0) {
      const xMin = Math.min(...cells.map((c) => c.x0));
      const xMax = Math.max(...cells.map((c) => c.x1));
      const span = xMax - xMin || 1;
      const overlay = document.createElement("div");
      overlay.className = "brush";
      const left = ((plot.brush.x0 - xMin) / span) * PLOT_WIDTH;
      const right = ((plot.brush.x1 - xMin) / span) * PLOT_WIDTH;
      overlay.style.left = `${left}px`;
      overlay.style.width = `${Math.max(right - left, 0)}px`;
      area.appendChild(overlay);
    }
  }

  let dragStart: number | null = null;
  area.addEventListener("mousedown", (ev) => {
    dragStart = ev.offsetX;
  });
  area.addEventListener("mouseup", (ev) => {
    if (dragStart !== null && Math.abs(ev.offsetX - dragStart) > 3) {
      hooks.onBrush(
        plot.dim,
        Math.min(dragStart, ev.offsetX),
        Math.max(dragStart, ev.offsetX),
      );
    }
    dragStart = null;
  });

  box.appendChild(area);
  box.appendChild(metricsStrip(plot));
  return box;
}

export function renderDashboard(
  state: ViewState,
  container: HTMLElement,
  hooks: RenderHooks,
): void {
  container.replaceChildren();
  const status = document.createElement("div");
  status.className = "status";
  status.textContent =
    `session ${state.sessionId ?? "-"} · ${state.status}` +
    (state.refining ? " · refining…" : "") +
    (state.lastError ? ` · error: ${state.lastError}` : "");
  container.appendChild(status);

  const grid = document.createElement("div");
  grid.className = "grid";
  for (const dim of Object.keys(state.plots).sort()) {
    const plot = state.plots[dim];
    if (plot) {
      grid.appendChild(renderPlot(plot, hooks));
    }
  }
  container.appendChild(grid);
}
