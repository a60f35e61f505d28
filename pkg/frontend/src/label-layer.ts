import type { Rect } from "./types.js";

export const UNDO_DEPTH = 16;

/**
 * The authoritative per-pixel id layer the user edits.
 *
 * Every mutating operation clamps itself to the hole rectangle, so pixels
 * outside the hole can never change client-side (the server re-validates).
 * Undo snapshots are whole-layer copies, bounded at UNDO_DEPTH.
 */
export class LabelLayer {
  readonly width: number;
  readonly height: number;
  readonly hole: Rect;
  ids: Uint8Array;
  private undoStack: Uint8Array[] = [];
  private strokeOpen = false;

  constructor(width: number, height: number, ids: Uint8Array, hole: Rect) {
    if (ids.length !== width * height) {
      throw new Error(`layer is ${ids.length} bytes, expected ${width * height}`);
    }
    this.width = width;
    this.height = height;
    this.ids = ids.slice();
    this.hole = hole;
  }

  private inHole(x: number, y: number): boolean {
    return x >= this.hole.x && x < this.hole.x + this.hole.w
      && y >= this.hole.y && y < this.hole.y + this.hole.h;
  }

  /** Open an undo boundary; the next undo() restores the layer as of now. */
  beginStroke(): void {
    if (this.strokeOpen) return;
    this.undoStack.push(this.ids.slice());
    if (this.undoStack.length > UNDO_DEPTH) {
      this.undoStack.shift();
    }
    this.strokeOpen = true;
  }

  endStroke(): void {
    this.strokeOpen = false;
  }

  /**
   * Stamp a filled circle of `category` at (cx, cy), clipped to the hole.
   * Returns the number of pixels changed; a stroke entirely outside the
   * hole is a visual no-op (returns 0).
   */
  paint(cx: number, cy: number, radius: number, category: number): number {
    let changed = 0;
    const r2 = radius * radius;
    const x0 = Math.max(Math.floor(cx - radius), this.hole.x);
    const x1 = Math.min(Math.ceil(cx + radius), this.hole.x + this.hole.w - 1);
    const y0 = Math.max(Math.floor(cy - radius), this.hole.y);
    const y1 = Math.min(Math.ceil(cy + radius), this.hole.y + this.hole.h - 1);
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r2 && this.ids[y * this.width + x] !== category) {
          this.ids[y * this.width + x] = category;
          changed++;
        }
      }
    }
    return changed;
  }

  /**
   * Flood-fill the contiguous same-id region at (x, y) with `category`,
   * confined to the hole rectangle. No-op outside the hole.
   */
  floodFill(x: number, y: number, category: number): number {
    if (!this.inHole(x, y)) return 0;
    const source = this.ids[y * this.width + x];
    if (source === category) return 0;
    const stack: number[] = [y * this.width + x];
    let changed = 0;
    while (stack.length) {
      const index = stack.pop()!;
      if (this.ids[index] !== source) continue;
      const px = index % this.width;
      const py = (index - px) / this.width;
      if (!this.inHole(px, py)) continue;
      this.ids[index] = category;
      changed++;
      if (px > 0) stack.push(index - 1);
      if (px < this.width - 1) stack.push(index + 1);
      if (py > 0) stack.push(index - this.width);
      if (py < this.height - 1) stack.push(index + this.width);
    }
    return changed;
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  /** Restore the layer to the state before the most recent stroke. */
  undo(): boolean {
    const snapshot = this.undoStack.pop();
    if (!snapshot) return false;
    this.ids = snapshot;
    this.strokeOpen = false;
    return true;
  }

  /** Count pixels that differ from `reference` outside the hole (must be 0). */
  outsideHoleDiff(reference: Uint8Array): number {
    let differing = 0;
    for (let y = 0; y < this.height; y++) {
      for (let x = 0; x < this.width; x++) {
        if (!this.inHole(x, y) && this.ids[y * this.width + x] !== reference[y * this.width + x]) {
          differing++;
        }
      }
    }
    return differing;
  }
}
