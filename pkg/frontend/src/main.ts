/**
 * Application entry point: dataset picker, knob panel, linked plots.
 */
import {
  ActionChannel,
  debounce,
  filterAction,
  groAction,
  refineBinAction,
  refineInterestingAction,
  refineMaxAction,
  resetAction,
  runBaseAction,
  stopAction,
} from "./actions.js";
import { createSession, fetchDatasets, openStream } from "./client.js";
import type { DatasetMeta, Knobs, Level } from "./protocol.js";
import { DEFAULT_KNOBS, INTEREST_THRESHOLD } from "./protocol.js";
import { renderDashboard } from "./render.js";
import { applyFrame, createViewState, markPending, setBrush } from "./state.js";
import type { ViewState } from "./state.js";

const BRUSH_DEBOUNCE_MS = 120;

function knobPanel(onApply: (knobs: Knobs) => void): HTMLElement {
  const panel = document.createElement("fieldset");
  panel.className = "knobs";
  const legend = document.createElement("legend");
  legend.textContent = "refinement knobs";
  panel.appendChild(legend);

  const fields: Record<string, HTMLInputElement> = {};
  const rows: Array<[keyof Knobs, string, string]> = [
    ["min_ref", "min level", String(DEFAULT_KNOBS.min_ref)],
    ["max_ref", "max level (blank = full)", ""],
    ["min_nr", "min results", String(DEFAULT_KNOBS.min_nr)],
    ["max_nr", "max results (blank = ∞)", ""],
    ["min_ad", "min deviance", String(DEFAULT_KNOBS.min_ad)],
    ["max_rec", "max entropy change (blank = ∞)", ""],
  ];
  for (const [key, label, value] of rows) {
    const wrap = document.createElement("label");
    wrap.textContent = label + " ";
    const input = document.createElement("input");
    input.value = value;
    input.size = 6;
    if (key === "min_ad") {
      // slider with a detent at the just-noticeable-difference threshold
      input.type = "range";
      input.min = "0";
      input.max = "1";
      input.step = "0.01";
      input.value = "0";
      input.setAttribute("list", "ad-detents");
      const detents = document.createElement("datalist");
      detents.id = "ad-detents";
      const tick = document.createElement("option");
      tick.value = String(INTEREST_THRESHOLD);
      detents.appendChild(tick);
      wrap.appendChild(detents);
    }
    fields[key] = input;
    wrap.appendChild(input);
    panel.appendChild(wrap);
  }

  const apply = document.createElement("button");
  apply.textContent = "Refine (GRO)";
  apply.addEventListener("click", () => {
    const parse = (v: string): number | null =>
      v.trim() === "" ? null : Number(v);
    const maxRefRaw = fields["max_ref"]!.value.trim();
    const maxRef: Level =
      maxRefRaw === "" || maxRefRaw === "base" ? "base" : Number(maxRefRaw);
    onApply({
      min_ref: Number(fields["min_ref"]!.value) || 0,
      max_ref: maxRef,
      min_nr: Number(fields["min_nr"]!.value) || 0,
      max_nr: parse(fields["max_nr"]!.value),
      min_ad: Number(fields["min_ad"]!.value) || 0,
      max_rec: parse(fields["max_rec"]!.value),
    });
  });
  panel.appendChild(apply);
  return panel;
}

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) {
    throw new Error("missing #app element");
  }
  const datasets = await fetchDatasets();
  const first = datasets[0];
  if (!first) {
    root.textContent = "no datasets on the server";
    return;
  }
  const dims = new Map(first.dims.map((d) => [d.name, d]));

  let state: ViewState = createViewState();
  const channel = new ActionChannel();
  const plotsHost = document.createElement("div");

  const redraw = () =>
    renderDashboard(state, plotsHost, {
      onBrush: debounce((dim: string, x0px: number, x1px: number) => {
        const plot = state.plots[dim];
        const meta = dims.get(dim);
        if (!plot || !meta || plot.cells.length === 0) {
          return;
        }
        const xMin = Math.min(...plot.cells.map((c) => c.x0));
        const xMax = Math.max(...plot.cells.map((c) => c.x1));
        const toData = (px: number) => xMin + (px / 320) * (xMax - xMin);
        const x0 = toData(x0px);
        const x1 = toData(x1px);
        state = setBrush(state, dim, { x0, x1 });
        state = markPending(
          state,
          Object.keys(state.plots).filter((d) => d !== dim),
        );
        channel.send(filterAction(meta, plot.cells, x0, x1));
        redraw();
      }, BRUSH_DEBOUNCE_MS),
      onBarClick: (dim, cell) => {
        const action = refineBinAction(dim, cell);
        if (action === null) {
          return; // base-resolution bar; the tooltip already says so
        }
        state = markPending(state, [dim]);
        channel.send(action);
        redraw();
      },
    });

  const toolbar = document.createElement("div");
  toolbar.className = "toolbar";
  const button = (label: string, onClick: () => void) => {
    const b = document.createElement("button");
    b.textContent = label;
    b.addEventListener("click", onClick);
    toolbar.appendChild(b);
    return b;
  };
  button("Reset plots", () => channel.send(resetAction()));
  button("Stop refinement", () => channel.send(stopAction()));
  const dimPick = document.createElement("select");
  for (const d of first.dims) {
    const opt = document.createElement("option");
    opt.value = d.name;
    opt.textContent = d.name;
    dimPick.appendChild(opt);
  }
  toolbar.appendChild(dimPick);
  button("Refine to max", () => channel.send(refineMaxAction(dimPick.value)));
  button("Run on full data", () => channel.send(runBaseAction(dimPick.value)));
  button("Refine interesting", () =>
    channel.send(refineInterestingAction(dimPick.value)),
  );

  root.replaceChildren(
    toolbar,
    knobPanel((knobs) => channel.send(groAction(knobs, "all"))),
    plotsHost,
  );

  const sessionId = await createSession(first.name);
  state = { ...state, sessionId };
  openStream(sessionId, channel, {
    onFrame: (frame) => {
      state = applyFrame(state, frame);
      redraw();
    },
    onStatus: (status) => {
      state = { ...state, status };
      redraw();
    },
  });
  channel.onQueueWarning = (queued) => {
    state = { ...state, lastError: `disconnected, ${queued} action(s) queued` };
    redraw();
  };
  redraw();
}

boot().catch((err) => {
  const root = document.getElementById("app");
  if (root) {
    root.textContent = `failed to start: ${err}`;
  }
});
