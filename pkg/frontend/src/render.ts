/** Pure rendering primitives. Everything here maps (response, visibility)
 * to plain pixel buffers or marker descriptors and never touches the DOM,
 * so the full render path is testable off-browser; main.ts only blits. */

import { MARKER_SIZE, OVERLAY_ALPHA, colorFor, type Rgb } from "./palette.js";
import { base64ToBytes, decodePgm } from "./netpbm.js";
import type { Point, SegmentationResponse } from "./types.js";

export interface Frame {
  width: number;
  height: number;
  /** RGBA, row-major, 4 bytes per pixel */
  data: Uint8ClampedArray<ArrayBuffer>;
}

export function frameFromRgb(rgb: Uint8Array, width: number, height: number): Frame {
  if (rgb.length !== width * height * 3) {
    throw new Error(`expected ${width * height * 3} RGB bytes, got ${rgb.length}`);
  }
  const data = new Uint8ClampedArray(width * height * 4);
  for (let p = 0, o = 0, i = 0; p < width * height; p++) {
    data[o++] = rgb[i++]!;
    data[o++] = rgb[i++]!;
    data[o++] = rgb[i++]!;
    data[o++] = 255;
  }
  return { width, height, data };
}

export function cloneFrame(frame: Frame): Frame {
  return { width: frame.width, height: frame.height, data: new Uint8ClampedArray(frame.data) };
}

/** Decode the response's per-class masks into flat 0/255 pixel arrays. */
export function decodeMasks(res: SegmentationResponse): Map<number, Uint8Array> {
  const masks = new Map<number, Uint8Array>();
  for (const [key, b64] of Object.entries(res.masks)) {
    const gray = decodePgm(base64ToBytes(b64));
    if (gray.width !== res.width || gray.height !== res.height) {
      throw new Error(`mask for class ${key} is ${gray.width}x${gray.height}, ` +
        `response says ${res.width}x${res.height}`);
    }
    masks.set(Number(key), gray.pixels);
  }
  return masks;
}

/** Blend each visible class's mask over the base image at fixed alpha.
 * Classes composite in ascending id order so overlaps are deterministic. */
export function composeOverlay(
  base: Frame,
  masks: Map<number, Uint8Array>,
  isVisible: (classId: number) => boolean,
): Frame {
  const out = cloneFrame(base);
  const ids = [...masks.keys()].sort((a, b) => a - b);
  for (const id of ids) {
    if (!isVisible(id)) continue;
    const mask = masks.get(id)!;
    if (mask.length !== base.width * base.height) {
      throw new Error(`mask for class ${id} has ${mask.length} pixels, ` +
        `frame has ${base.width * base.height}`);
    }
    const [r, g, b] = colorFor(id);
    for (let p = 0; p < mask.length; p++) {
      if (mask[p] === 0) continue;
      const o = p * 4;
      out.data[o] = Math.round((1 - OVERLAY_ALPHA) * out.data[o]! + OVERLAY_ALPHA * r);
      out.data[o + 1] = Math.round((1 - OVERLAY_ALPHA) * out.data[o + 1]! + OVERLAY_ALPHA * g);
      out.data[o + 2] = Math.round((1 - OVERLAY_ALPHA) * out.data[o + 2]! + OVERLAY_ALPHA * b);
    }
  }
  return out;
}

export interface MarkerSpec {
  x: number; // image coordinates
  y: number;
  size: number;
  /** hollow square = generated point, solid square = user click */
  shape: "hollow" | "solid";
  color: Rgb;
  /** white border for positive points, black for negative */
  border: "white" | "black";
  classId: number;
}

/** Marker descriptors for every visible point; the DOM layer draws them at
 * screen scale so markers stay crisp regardless of canvas zoom. */
export function markerSpecs(
  points: readonly Point[],
  isVisible: (classId: number) => boolean,
): MarkerSpec[] {
  return points
    .filter((p) => isVisible(p.class_id))
    .map((p) => ({
      x: p.x,
      y: p.y,
      size: MARKER_SIZE,
      shape: p.source === "user" ? ("solid" as const) : ("hollow" as const),
      color: colorFor(p.class_id),
      border: p.positive ? ("white" as const) : ("black" as const),
      classId: p.class_id,
    }));
}

export interface BoxSpec {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
  color: Rgb;
  classId: number;
}

/** Normalized (corner-sorted) box descriptor for a drag rectangle. */
export function boxSpec(
  classId: number,
  ax: number,
  ay: number,
  bx: number,
  by: number,
): BoxSpec {
  return {
    x0: Math.min(ax, bx),
    y0: Math.min(ay, by),
    x1: Math.max(ax, bx),
    y1: Math.max(ay, by),
    color: colorFor(classId),
    classId,
  };
}
