import { describe, expect, it } from "vitest";

import { maskToRect, normalizeDrag, protocolStatus, rectToMaskPng } from "../src/hole.js";
import { decodeGray8 } from "../src/png.js";

describe("normalizeDrag", () => {
  it("accepts any corner order", () => {
    expect(normalizeDrag(50, 60, 10, 20, 256, 256)).toEqual({ x: 10, y: 20, w: 40, h: 40 });
  });

  it("clamps to the frame", () => {
    expect(normalizeDrag(-20, -5, 30, 40, 256, 256)).toEqual({ x: 0, y: 0, w: 30, h: 40 });
    expect(normalizeDrag(200, 200, 300, 300, 256, 256)).toEqual({ x: 200, y: 200, w: 56, h: 56 });
  });

  it("zero-area drags are ignored", () => {
    expect(normalizeDrag(10, 10, 10, 40, 256, 256)).toBeNull();
    expect(normalizeDrag(10, 10, 10, 10, 256, 256)).toBeNull();
  });
});

describe("protocolStatus", () => {
  it("flags the documented ranges per side", () => {
    expect(protocolStatus({ x: 0, y: 0, w: 100, h: 100 }, 256, 256)).toBe("in-range");
    expect(protocolStatus({ x: 0, y: 0, w: 20, h: 100 }, 256, 256)).toBe("too-small");
    expect(protocolStatus({ x: 0, y: 0, w: 130, h: 100 }, 256, 256)).toBe("too-large");
    expect(protocolStatus({ x: 0, y: 0, w: 32, h: 128 }, 256, 256)).toBe("in-range");
  });
});

describe("mask round trip", () => {
  it("rect -> PNG -> rect", async () => {
    const rect = { x: 12, y: 20, w: 40, h: 24 };
    const png = await rectToMaskPng(rect, 64, 64);
    const decoded = await decodeGray8(png);
    expect(maskToRect(decoded.width, decoded.height, decoded.data)).toEqual(rect);
    // strictly binary 0/255
    const unique = new Set(decoded.data);
    expect([...unique].sort()).toEqual([0, 255]);
  });

  it("empty mask has no rect", () => {
    expect(maskToRect(8, 8, new Uint8Array(64))).toBeNull();
  });
});
