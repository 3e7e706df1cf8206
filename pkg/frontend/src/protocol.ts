/**
 * Wire types for the streaming session protocol.
 *
 * Frames arrive over the WebSocket in strict sequence order; actions are
 * plain JSON objects sent on the same connection.
 */

/** Refinement level: 0..max_level, or "base" for the non-binned data. */
export type Level = number | "base";

export interface FrameCell {
  level: Level;
  bin: number;
  x0: number;
  x1: number;
  y: number;
}

export interface FrameMetrics {
  plot_ad: number | null;
  plot_entropy: number | null;
  plot_rec: number | null;
  plot_igp: number | null;
}

export type FrameKind = "snapshot" | "refine" | "done" | "error";

export interface Frame {
  seq: number;
  kind: FrameKind;
  dim: string | null;
  cells: FrameCell[];
  metrics: FrameMetrics;
  elapsed_ms: number;
  error?: string;
}

export interface FilterRange {
  level: Level;
  lo: number;
  hi: number;
}

export interface Knobs {
  min_ref: number;
  max_ref: Level;
  min_nr: number;
  max_nr: number | null;
  min_ad: number;
  max_rec: number | null;
}

/** The knob defaults leave everything open. */
export const DEFAULT_KNOBS: Knobs = {
  min_ref: 0,
  max_ref: "base",
  min_nr: 0,
  max_nr: null,
  min_ad: 0,
  max_rec: null,
};

/** Deviance below which refining a bin is not worth showing. */
export const INTEREST_THRESHOLD = 0.1;

export type GroScope = "all" | { dim: string; level?: Level; bin?: number };

export type Action =
  | { action: "filter"; dim: string; range: FilterRange | null }
  | { action: "refine_bin"; dim: string; level: Level; bin: number }
  | { action: "gro"; scope: GroScope; knobs: Knobs }
  | { action: "refine_max"; dim: string }
  | { action: "run_base"; dim: string }
  | { action: "refine_interesting"; dim: string }
  | { action: "reset" }
  | { action: "stop" };

export interface DimensionMeta {
  name: string;
  domain_min: number;
  domain_max: number;
  atomic_resolution: number;
  level0_bins: number;
  max_level: number;
}

export interface DatasetMeta {
  name: string;
  dims: DimensionMeta[];
}

export function binCount(dim: DimensionMeta, level: Level): number {
  if (level === "base") {
    return Math.round((dim.domain_max - dim.domain_min) / dim.atomic_resolution);
  }
  return dim.level0_bins * 2 ** level;
}

export function levelDepth(dim: DimensionMeta, level: Level): number {
  return level === "base" ? dim.max_level + 1 : level;
}
