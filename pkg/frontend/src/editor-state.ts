import { EditorApi, b64ToBytes } from "./api.js";
import { decodeGray8, encodeGray8 } from "./png.js";
import { LabelLayer } from "./label-layer.js";
import { maskToRect } from "./hole.js";
import type { Rect, Rgb } from "./types.js";

export interface RenderEntry {
  seq: number;
  imagePng: Uint8Array;
  thumbnailPng: Uint8Array | null;
  labelsSnapshot: Uint8Array;
  /** Set when this render is byte-equal to the previous one (no-edit replay). */
  duplicate: boolean;
}

function bytesEqual(a: Uint8Array, b: Uint8Array): boolean {
  if (a.length !== b.length) return false;
  for (let i = 0; i < a.length; i++) {
    if (a[i] !== b[i]) return false;
  }
  return true;
}

/**
 * Client-side session state: the editable label layer, the strip of past
 * renders, and the submission/render workflow against the service. At most
 * one render request is in flight; further calls return the same promise
 * until it settles (the UI disables the button meanwhile).
 */
export class EditorSession {
  readonly id: string;
  readonly width: number;
  readonly height: number;
  readonly hole: Rect;
  readonly palette: Rgb[];
  readonly categories: string[];
  readonly layer: LabelLayer;
  readonly renders: RenderEntry[] = [];
  private submittedIds: Uint8Array;
  private inFlight: Promise<RenderEntry> | null = null;

  private constructor(args: {
    id: string; width: number; height: number; hole: Rect;
    palette: Rgb[]; categories: string[]; layer: LabelLayer;
  }) {
    this.id = args.id;
    this.width = args.width;
    this.height = args.height;
    this.hole = args.hole;
    this.palette = args.palette;
    this.categories = args.categories;
    this.layer = args.layer;
    this.submittedIds = args.layer.ids.slice();
  }

  /** Upload an image + hole mask and start editing from the network's proposal. */
  static async create(api: EditorApi, imagePng: Uint8Array, maskPng: Uint8Array): Promise<EditorSession> {
    const created = await api.createSession(imagePng, maskPng);
    const proposal = await decodeGray8(b64ToBytes(created.sp_labels_png));
    const mask = await decodeGray8(maskPng);
    const hole = maskToRect(mask.width, mask.height, mask.data)
      ?? { x: 0, y: 0, w: 0, h: 0 };
    return new EditorSession({
      id: created.id,
      width: proposal.width,
      height: proposal.height,
      hole,
      palette: created.palette,
      categories: created.categories,
      layer: new LabelLayer(proposal.width, proposal.height, proposal.data, hole),
    });
  }

  /** Rebuild the full client state from the server session (refresh-safe). */
  static async resume(api: EditorApi, id: string): Promise<EditorSession> {
    const state = await api.getSession(id);
    const labels = await decodeGray8(b64ToBytes(state.labels_png));
    const mask = await decodeGray8(b64ToBytes(state.mask_png));
    const hole = maskToRect(mask.width, mask.height, mask.data)
      ?? { x: 0, y: 0, w: 0, h: 0 };
    const session = new EditorSession({
      id,
      width: labels.width,
      height: labels.height,
      hole,
      palette: state.palette,
      categories: state.categories,
      layer: new LabelLayer(labels.width, labels.height, labels.data, hole),
    });
    for (const entry of await api.history(id)) {
      const snapshot = await decodeGray8(b64ToBytes(entry.labels_png));
      session.renders.push({
        seq: entry.seq,
        imagePng: b64ToBytes(entry.image_png),
        thumbnailPng: null,
        labelsSnapshot: snapshot.data,
        duplicate: false,
      });
    }
    return session;
  }

  /** True when the layer differs from what the server last accepted. */
  get dirty(): boolean {
    return !bytesEqual(this.layer.ids, this.submittedIds);
  }

  get renderBusy(): boolean {
    return this.inFlight !== null;
  }

  /** PUT the current label layer; on success the dirty flag clears. */
  async submitLabels(api: EditorApi): Promise<void> {
    const png = await encodeGray8(this.width, this.height, this.layer.ids);
    await api.putLabels(this.id, png);
    this.submittedIds = this.layer.ids.slice();
  }

  /**
   * Submit pending edits (if any) and render. The result lands at the end
   * of the history strip; a byte-identical repeat is flagged `duplicate`
   * so the UI can show a notice instead of a new thumbnail.
   */
  requestRender(api: EditorApi): Promise<RenderEntry> {
    if (this.inFlight) {
      return this.inFlight;
    }
    this.inFlight = (async () => {
      try {
        if (this.dirty) {
          await this.submitLabels(api);
        }
        const result = await api.render(this.id);
        const imagePng = b64ToBytes(result.image_png);
        const previous = this.renders[this.renders.length - 1];
        const entry: RenderEntry = {
          seq: result.seq,
          imagePng,
          thumbnailPng: b64ToBytes(result.thumbnail_png),
          labelsSnapshot: this.layer.ids.slice(),
          duplicate: previous !== undefined && bytesEqual(previous.imagePng, imagePng),
        };
        this.renders.push(entry);
        return entry;
      } finally {
        this.inFlight = null;
      }
    })();
    return this.inFlight;
  }
}
