import { describe, expect, it } from "vitest";

import { EditorSession } from "../src/editor-state.js";
import { ApiError } from "../src/api.js";
import { decodeGray8, encodeGray8 } from "../src/png.js";
import { rectToMaskPng } from "../src/hole.js";
import type { Rect, Rgb } from "../src/types.js";

const SIZE = 32;
const HOLE: Rect = { x: 8, y: 8, w: 12, h: 12 };
const PALETTE: Rgb[] = [[0, 0, 0], [10, 10, 10], [20, 20, 20], [30, 30, 30],
                        [40, 40, 40], [50, 50, 50], [60, 60, 60], [70, 70, 70]];

const b64 = (bytes: Uint8Array) => Buffer.from(bytes).toString("base64");

/** In-memory stand-in implementing the service contract used by the client. */
class FakeApi {
  labels = new Uint8Array(SIZE * SIZE).fill(1);
  s0 = this.labels.slice();
  seq = 0;
  putCalls = 0;
  renderCalls = 0;
  entries: { seq: number; labels_png: string; image_png: string }[] = [];
  pendingRender: (() => void) | null = null;

  async createSession(_image: Uint8Array, _mask: Uint8Array) {
    return {
      id: "fake-session",
      labels_png: b64(await encodeGray8(SIZE, SIZE, this.s0)),
      sp_labels_png: b64(await encodeGray8(SIZE, SIZE, this.labels)),
      palette: PALETTE,
      categories: PALETTE.map((_, i) => `cat${i}`),
    };
  }

  async getSession(id: string) {
    return {
      id,
      image_png: "",
      mask_png: b64(await rectToMaskPng(HOLE, SIZE, SIZE)),
      labels_png: b64(await encodeGray8(SIZE, SIZE, this.labels)),
      sp_labels_png: b64(await encodeGray8(SIZE, SIZE, this.labels)),
      palette: PALETTE,
      categories: PALETTE.map((_, i) => `cat${i}`),
      history_len: this.entries.length,
      expires_at: 0,
    };
  }

  async getLabels(_id: string): Promise<Uint8Array> {
    return encodeGray8(SIZE, SIZE, this.labels);
  }

  async putLabels(_id: string, png: Uint8Array): Promise<void> {
    this.putCalls++;
    const decoded = await decodeGray8(png);
    let violations = 0;
    for (let y = 0; y < SIZE; y++) {
      for (let x = 0; x < SIZE; x++) {
        const inHole = x >= HOLE.x && x < HOLE.x + HOLE.w && y >= HOLE.y && y < HOLE.y + HOLE.h;
        if (!inHole && decoded.data[y * SIZE + x] !== this.s0[y * SIZE + x]) violations++;
      }
    }
    if (violations) throw new ApiError(422, `${violations} edited pixels lie outside the hole`);
    this.labels = decoded.data.slice();
  }

  async history(_id: string) {
    return this.entries;
  }

  async render(_id: string) {
    this.renderCalls++;
    if (this.pendingRender) {
      await new Promise<void>((resolve) => { this.pendingRender = resolve as () => void; });
    }
    // deterministic fake: the "image" is the label layer itself
    const image_png = b64(await encodeGray8(SIZE, SIZE, this.labels));
    const entry = { seq: this.seq++, labels_png: b64(await encodeGray8(SIZE, SIZE, this.labels)), image_png };
    this.entries.push(entry);
    return { seq: entry.seq, image_png, thumbnail_png: image_png };
  }
}

async function makeSession(api: FakeApi): Promise<EditorSession> {
  const mask = await rectToMaskPng(HOLE, SIZE, SIZE);
  return EditorSession.create(api as never, new Uint8Array([137]), mask);
}

describe("EditorSession workflow", () => {
  it("derives the hole and layer from the created session", async () => {
    const session = await makeSession(new FakeApi());
    expect(session.hole).toEqual(HOLE);
    expect(session.width).toBe(SIZE);
    expect(session.dirty).toBe(false);
  });

  it("render submits dirty edits first and appends to the strip", async () => {
    const api = new FakeApi();
    const session = await makeSession(api);
    session.layer.beginStroke();
    session.layer.paint(12, 12, 3, 5);
    session.layer.endStroke();
    expect(session.dirty).toBe(true);
    const entry = await session.requestRender(api as never);
    expect(api.putCalls).toBe(1);
    expect(session.dirty).toBe(false);
    expect(entry.duplicate).toBe(false);
    expect(session.renders).toHaveLength(1);
  });

  it("render without new edits is flagged duplicate", async () => {
    const api = new FakeApi();
    const session = await makeSession(api);
    await session.requestRender(api as never);
    const repeat = await session.requestRender(api as never);
    expect(repeat.duplicate).toBe(true);
    expect(session.renders).toHaveLength(2);
  });

  it("distinct edits produce distinct strip entries", async () => {
    const api = new FakeApi();
    const session = await makeSession(api);
    session.layer.beginStroke();
    session.layer.paint(12, 12, 3, 5);
    const first = await session.requestRender(api as never);
    session.layer.beginStroke();
    session.layer.paint(14, 14, 3, 7);
    const second = await session.requestRender(api as never);
    expect(second.duplicate).toBe(false);
    expect(Buffer.compare(first.imagePng, second.imagePng)).not.toBe(0);
  });

  it("only one render request is in flight at a time", async () => {
    const api = new FakeApi();
    const session = await makeSession(api);
    api.pendingRender = () => undefined; // hold the first render open
    const first = session.requestRender(api as never);
    const second = session.requestRender(api as never);
    expect(second).toBe(first); // queued onto the same request
    expect(session.renderBusy).toBe(true);
    api.pendingRender?.();
    api.pendingRender = null;
    await first;
    expect(api.renderCalls).toBe(1);
  });

  it("failed render keeps edits and allows retry", async () => {
    const api = new FakeApi();
    const session = await makeSession(api);
    const broken = Object.create(api) as FakeApi;
    broken.render = async () => { throw new ApiError(500, "boom"); };
    session.layer.beginStroke();
    session.layer.paint(12, 12, 2, 6);
    await expect(session.requestRender(broken as never)).rejects.toThrow("boom");
    expect(session.renderBusy).toBe(false);
    expect(session.renders).toHaveLength(0);
    const retried = await session.requestRender(api as never);
    expect(retried.seq).toBe(0);
  });

  it("resume rebuilds layer and strip from the server session", async () => {
    const api = new FakeApi();
    const session = await makeSession(api);
    session.layer.beginStroke();
    session.layer.paint(12, 12, 3, 5);
    await session.requestRender(api as never);
    const resumed = await EditorSession.resume(api as never, session.id);
    expect(Array.from(resumed.layer.ids)).toEqual(Array.from(session.layer.ids));
    expect(resumed.hole).toEqual(HOLE);
    expect(resumed.renders).toHaveLength(1);
  });
});
