/**
 * Brush snapping: a drag in data units becomes a filter over whole displayed
 * bins, expressed at the finest level the brush touched so the predicate maps
 * exactly onto every displayed cell.
 */
import type {
  DimensionMeta,
  FilterRange,
  FrameCell,
  Level,
} from "./protocol.js";
import { binCount, levelDepth } from "./protocol.js";

/**
 * Expand [x0, x1) to the boundaries of the displayed cells it touches and
 * express the result as a bin-index range.  Returns null when the brush
 * touches nothing (zero-width drags clear the filter instead).
 */
export function snapBrush(
  dim: DimensionMeta,
  cells: FrameCell[],
  x0: number,
  x1: number,
): FilterRange | null {
  if (x1 <= x0) {
    return null;
  }
  const touched = cells.filter((c) => c.x1 > x0 && c.x0 < x1);
  if (touched.length === 0) {
    return null;
  }
  let level: Level = 0;
  for (const c of touched) {
    if (levelDepth(dim, c.level) > levelDepth(dim, level)) {
      level = c.level;
    }
  }
  const spanX0 = Math.min(...touched.map((c) => c.x0));
  const spanX1 = Math.max(...touched.map((c) => c.x1));
  const width = (dim.domain_max - dim.domain_min) / binCount(dim, level);
  // touched-cell edges sit exactly on this level's boundaries; round off float noise
  const lo = Math.round((spanX0 - dim.domain_min) / width);
  const hi = Math.round((spanX1 - dim.domain_min) / width);
  return { level, lo, hi };
}

/** A filter is redundant when it covers the whole domain; send null instead. */
export function coversWholeDomain(dim: DimensionMeta, range: FilterRange): boolean {
  return range.lo === 0 && range.hi === binCount(dim, range.level);
}
