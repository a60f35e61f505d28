import type { Rect } from "./types.js";
import { encodeGray8 } from "./png.js";

/** Hole-size protocol bounds, per side, as a fraction of the image side. */
export const HOLE_MIN_FRACTION = 1 / 8;
export const HOLE_MAX_FRACTION = 1 / 2;

/**
 * Normalize a drag gesture into an image-space rectangle: any corner order,
 * clamped to the frame. Returns null for zero-area drags.
 */
export function normalizeDrag(
  x0: number, y0: number, x1: number, y1: number,
  imageWidth: number, imageHeight: number,
): Rect | null {
  const clampX = (v: number) => Math.min(Math.max(Math.round(v), 0), imageWidth);
  const clampY = (v: number) => Math.min(Math.max(Math.round(v), 0), imageHeight);
  const left = clampX(Math.min(x0, x1));
  const right = clampX(Math.max(x0, x1));
  const top = clampY(Math.min(y0, y1));
  const bottom = clampY(Math.max(y0, y1));
  if (right - left <= 0 || bottom - top <= 0) {
    return null;
  }
  return { x: left, y: top, w: right - left, h: bottom - top };
}

export type ProtocolStatus = "in-range" | "too-small" | "too-large";

/** Size indicator for the drawn hole; out-of-protocol holes stay submittable. */
export function protocolStatus(rect: Rect, imageWidth: number, imageHeight: number): ProtocolStatus {
  const sides: Array<[number, number]> = [[rect.w, imageWidth], [rect.h, imageHeight]];
  if (sides.some(([side, dim]) => side < Math.ceil(dim * HOLE_MIN_FRACTION))) {
    return "too-small";
  }
  if (sides.some(([side, dim]) => side > Math.floor(dim * HOLE_MAX_FRACTION))) {
    return "too-large";
  }
  return "in-range";
}

/** Single-rectangle hole mask PNG (255 = hole) for session creation. */
export function rectToMaskPng(rect: Rect, imageWidth: number, imageHeight: number): Promise<Uint8Array> {
  const data = new Uint8Array(imageWidth * imageHeight);
  for (let y = rect.y; y < rect.y + rect.h; y++) {
    data.fill(255, y * imageWidth + rect.x, y * imageWidth + rect.x + rect.w);
  }
  return encodeGray8(imageWidth, imageHeight, data);
}

/** Tight bounding rectangle of the 255-pixels in a decoded mask, or null. */
export function maskToRect(width: number, height: number, data: Uint8Array): Rect | null {
  let minX = width, minY = height, maxX = -1, maxY = -1;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      if (data[y * width + x] > 127) {
        if (x < minX) minX = x;
        if (x > maxX) maxX = x;
        if (y < minY) minY = y;
        if (y > maxY) maxY = y;
      }
    }
  }
  if (maxX < 0) return null;
  return { x: minX, y: minY, w: maxX - minX + 1, h: maxY - minY + 1 };
}
