/** Display constants: per-class colors, overlay opacity, marker geometry. */

export type Rgb = readonly [number, number, number];

// Halved-intensity RGB cycle for foreground ids 1..8; background (0) is
// never painted. Ids beyond the palette fall back to a neutral gray so an
// unusually large class count degrades visibly instead of crashing.
export const CLASS_COLORS: readonly Rgb[] = [
  [128, 0, 0],
  [0, 128, 0],
  [128, 128, 0],
  [0, 0, 128],
  [128, 0, 128],
  [0, 128, 128],
  [128, 128, 128],
  [64, 0, 0],
];

export const FALLBACK_COLOR: Rgb = [160, 160, 160];

export const OVERLAY_ALPHA = 0.5;

/** Marker edge length in canvas pixels, for both hollow and solid styles. */
export const MARKER_SIZE = 6;

export function colorFor(classId: number): Rgb {
  if (!Number.isInteger(classId) || classId < 1) {
    throw new Error(`invalid class id ${classId}`);
  }
  return CLASS_COLORS[classId - 1] ?? FALLBACK_COLOR;
}

export function cssColor(rgb: Rgb): string {
  return `rgb(${rgb[0]}, ${rgb[1]}, ${rgb[2]})`;
}
