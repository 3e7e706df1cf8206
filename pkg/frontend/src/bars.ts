/**
 * Bar layout for mixed-resolution histograms.
 *
 * Bar width is proportional to the cell's x-range, so refined regions show
 * visibly narrower bars than unrefined neighbors on the same plot.
 */
import type { FrameCell } from "./protocol.js";

export interface BarRect {
  cell: FrameCell;
  /** pixel offsets within the plot area */
  x: number;
  y: number;
  width: number;
  height: number;
}

export function computeBars(
  cells: FrameCell[],
  plotWidth: number,
  plotHeight: number,
): BarRect[] {
  if (cells.length === 0) {
    return [];
  }
  const xMin = Math.min(...cells.map((c) => c.x0));
  const xMax = Math.max(...cells.map((c) => c.x1));
  const span = xMax - xMin || 1;
  const yMax = Math.max(...cells.map((c) => c.y), 0) || 1;
  return cells.map((cell) => {
    const x = ((cell.x0 - xMin) / span) * plotWidth;
    const width = ((cell.x1 - cell.x0) / span) * plotWidth;
    const height = (Math.max(cell.y, 0) / yMax) * plotHeight;
    return { cell, x, y: plotHeight - height, width, height };
  });
}

/** Data-unit x for a pixel offset within the plot area. */
export function pixelToData(
  px: number,
  cells: FrameCell[],
  plotWidth: number,
): number {
  const xMin = Math.min(...cells.map((c) => c.x0));
  const xMax = Math.max(...cells.map((c) => c.x1));
  return xMin + (Math.min(Math.max(px, 0), plotWidth) / plotWidth) * (xMax - xMin);
}
