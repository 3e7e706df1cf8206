/**
 * Dashboard state: the latest accepted frame per plot plus global session
 * status.  applyFrame is pure; stale (out-of-order) frames leave the state
 * untouched, so render output is a function of the accepted frame history.
 */
import type { Frame, FrameCell, FrameMetrics, Knobs } from "./protocol.js";
import { DEFAULT_KNOBS } from "./protocol.js";

export interface PlotState {
  dim: string;
  cells: FrameCell[];
  metrics: FrameMetrics;
  /** true while a request is outstanding for this plot */
  pending: boolean;
  /** active brush extent in data units, if any */
  brush: { x0: number; x1: number } | null;
  lastKind: "snapshot" | "refine";
  elapsedMs: number;
}

export type ConnectionStatus = "connecting" | "open" | "closed";

export interface ViewState {
  sessionId: string | null;
  status: ConnectionStatus;
  lastSeq: number;
  plots: Record<string, PlotState>;
  knobs: Knobs;
  refining: boolean;
  lastError: string | null;
  droppedFrames: number;
}

export function createViewState(): ViewState {
  return {
    sessionId: null,
    status: "connecting",
    lastSeq: 0,
    plots: {},
    knobs: { ...DEFAULT_KNOBS },
    refining: false,
    lastError: null,
    droppedFrames: 0,
  };
}

const EMPTY_METRICS: FrameMetrics = {
  plot_ad: null,
  plot_entropy: null,
  plot_rec: null,
  plot_igp: null,
};

/**
 * Fold one incoming frame into the state.  Frames whose seq does not advance
 * past the last applied one are dropped (reconnect replays and reordering
 * make these possible); done/error frames update global status only.
 */
export function applyFrame(state: ViewState, frame: Frame): ViewState {
  if (frame.seq <= state.lastSeq) {
    return { ...state, droppedFrames: state.droppedFrames + 1 };
  }
  const next: ViewState = { ...state, lastSeq: frame.seq };
  if (frame.kind === "done") {
    next.refining = false;
    return next;
  }
  if (frame.kind === "error") {
    next.lastError = frame.error ?? "unknown error";
    next.refining = false;
    return next;
  }
  if (frame.dim === null) {
    return next;
  }
  const prev = state.plots[frame.dim];
  next.plots = {
    ...state.plots,
    [frame.dim]: {
      dim: frame.dim,
      cells: frame.cells,
      metrics: frame.metrics ?? EMPTY_METRICS,
      pending: false,
      brush: prev?.brush ?? null,
      lastKind: frame.kind,
      elapsedMs: frame.elapsed_ms,
    },
  };
  if (frame.kind === "refine") {
    next.refining = true;
  }
  return next;
}

export function markPending(state: ViewState, dims: string[]): ViewState {
  const plots = { ...state.plots };
  for (const d of dims) {
    const plot = plots[d];
    if (plot) {
      plots[d] = { ...plot, pending: true };
    }
  }
  return { ...state, plots };
}

export function setBrush(
  state: ViewState,
  dim: string,
  brush: { x0: number; x1: number } | null,
): ViewState {
  const plot = state.plots[dim];
  if (!plot) {
    return state;
  }
  return { ...state, plots: { ...state.plots, [dim]: { ...plot, brush } } };
}
