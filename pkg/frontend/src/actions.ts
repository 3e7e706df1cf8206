/**
 * Gesture-to-action translation and the outgoing action channel.
 *
 * Every gesture produces at most one action.  While disconnected, actions
 * queue with a visible warning and flush on reconnect.  Brush drags are
 * debounced on the trailing edge so a drag storm becomes one filter.
 */
import type {
  Action,
  DimensionMeta,
  FrameCell,
  Knobs,
  Level,
} from "./protocol.js";
import { coversWholeDomain, snapBrush } from "./snap.js";

export function filterAction(
  dim: DimensionMeta,
  cells: FrameCell[],
  x0: number,
  x1: number,
): Action {
  const range = snapBrush(dim, cells, x0, x1);
  if (range === null || coversWholeDomain(dim, range)) {
    return { action: "filter", dim: dim.name, range: null };
  }
  return { action: "filter", dim: dim.name, range };
}

export function clearFilterAction(dim: string): Action {
  return { action: "filter", dim, range: null };
}

/** Bar click; returns null for cells already at full resolution. */
export function refineBinAction(dim: string, cell: FrameCell): Action | null {
  if (cell.level === "base") {
    return null;
  }
  return { action: "refine_bin", dim, level: cell.level, bin: cell.bin };
}

export function groAction(
  knobs: Knobs,
  scope: "all" | { dim: string; level?: Level; bin?: number } = "all",
): Action {
  return { action: "gro", scope, knobs };
}

export function resetAction(): Action {
  return { action: "reset" };
}

export function stopAction(): Action {
  return { action: "stop" };
}

export function refineMaxAction(dim: string): Action {
  return { action: "refine_max", dim };
}

export function runBaseAction(dim: string): Action {
  return { action: "run_base", dim };
}

export function refineInterestingAction(dim: string): Action {
  return { action: "refine_interesting", dim };
}

export interface ActionSink {
  send(action: Action): void;
}

/** Queues while disconnected; flushes in order once the socket opens. */
export class ActionChannel implements ActionSink {
  private queue: Action[] = [];
  private transport: ((action: Action) => void) | null = null;
  onQueueWarning: ((queued: number) => void) | null = null;

  connect(transport: (action: Action) => void): void {
    this.transport = transport;
    const pending = this.queue;
    this.queue = [];
    for (const action of pending) {
      transport(action);
    }
  }

  disconnect(): void {
    this.transport = null;
  }

  get connected(): boolean {
    return this.transport !== null;
  }

  get queuedCount(): number {
    return this.queue.length;
  }

  send(action: Action): void {
    if (this.transport) {
      this.transport(action);
    } else {
      this.queue.push(action);
      this.onQueueWarning?.(this.queue.length);
    }
  }
}

/** Trailing-edge debounce; the last call within the window wins. */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  waitMs: number,
): (...args: A) => void {
  let timer: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (timer !== null) {
      clearTimeout(timer);
    }
    timer = setTimeout(() => {
      timer = null;
      fn(...args);
    }, waitMs);
  };
}
