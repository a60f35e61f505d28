/**
 * Browser bootstrap: canvas wiring around the DOM-free core modules.
 *
 * Flow: load an image, drag the hole rectangle, create the session, paint
 * label edits inside the hole (the id layer is authoritative; the colored
 * overlay is derived), render, and compare results in the history strip.
 */

import { ApiError, EditorApi } from "./api.js";
import { EditorSession } from "./editor-state.js";
import { normalizeDrag, protocolStatus, rectToMaskPng } from "./hole.js";
import type { Rect } from "./types.js";

const api = new EditorApi("");

const el = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
};

const stage = el<HTMLCanvasElement>("stage");
const overlay = el<HTMLCanvasElement>("overlay");
const statusLine = el<HTMLDivElement>("status");
const strip = el<HTMLDivElement>("history-strip");
const brushControls = el<HTMLDivElement>("brush-controls");

let baseImage: HTMLImageElement | null = null;
let imagePngBytes: Uint8Array | null = null;
let holeRect: Rect | null = null;
let dragStart: { x: number; y: number } | null = null;
let session: EditorSession | null = null;
let brushCategory = 0;
let brushRadius = 6;
let fillMode = false;
let painting = false;

function setStatus(text: string, kind: "info" | "warn" | "error" = "info"): void {
  statusLine.textContent = text;
  statusLine.className = kind;
}

function canvasPoint(event: MouseEvent): { x: number; y: number } {
  const bounds = stage.getBoundingClientRect();
  return {
    x: (event.clientX - bounds.left) * (stage.width / bounds.width),
    y: (event.clientY - bounds.top) * (stage.height / bounds.height),
  };
}

function drawBase(): void {
  const ctx = stage.getContext("2d")!;
  ctx.clearRect(0, 0, stage.width, stage.height);
  if (baseImage) ctx.drawImage(baseImage, 0, 0);
}

function drawOverlay(): void {
  const ctx = overlay.getContext("2d")!;
  ctx.clearRect(0, 0, overlay.width, overlay.height);
  if (session) {
    const image = ctx.createImageData(session.width, session.height);
    const { ids } = session.layer;
    const hole = session.hole;
    for (let y = 0; y < session.height; y++) {
      for (let x = 0; x < session.width; x++) {
        const i = y * session.width + x;
        const [r, g, b] = session.palette[ids[i]] ?? [255, 0, 255];
        const inHole = x >= hole.x && x < hole.x + hole.w && y >= hole.y && y < hole.y + hole.h;
        image.data[4 * i] = r;
        image.data[4 * i + 1] = g;
        image.data[4 * i + 2] = b;
        image.data[4 * i + 3] = inHole ? 200 : 90;
      }
    }
    ctx.putImageData(image, 0, 0);
  }
  const rect = session?.hole ?? holeRect;
  if (rect) {
    ctx.strokeStyle = "#ff3366";
    ctx.lineWidth = 2;
    ctx.strokeRect(rect.x + 0.5, rect.y + 0.5, rect.w, rect.h);
  }
}

function renderStrip(): void {
  strip.replaceChildren();
  if (!session) return;
  for (const entry of session.renders) {
    const img = document.createElement("img");
    const blob = new Blob([entry.imagePng as BlobPart], { type: "image/png" });
    img.src = URL.createObjectURL(blob);
    img.title = entry.duplicate ? `render ${entry.seq} (identical to previous)` : `render ${entry.seq}`;
    img.className = entry.duplicate ? "duplicate" : "";
    strip.appendChild(img);
  }
}

function buildBrushControls(): void {
  brushControls.replaceChildren();
  if (!session) return;
  session.categories.forEach((name, index) => {
    const button = document.createElement("button");
    const [r, g, b] = session!.palette[index];
    button.textContent = name;
    button.style.borderColor = `rgb(${r},${g},${b})`;
    button.className = index === brushCategory ? "active" : "";
    button.onclick = () => {
      brushCategory = index;
      buildBrushControls();
    };
    brushControls.appendChild(button);
  });
}

async function startSession(): Promise<void> {
  if (!imagePngBytes || !holeRect || !baseImage) {
    setStatus("load an image and drag a hole rectangle first", "warn");
    return;
  }
  try {
    const mask = await rectToMaskPng(holeRect, baseImage.width, baseImage.height);
    session = await EditorSession.create(api, imagePngBytes, mask);
    setStatus(`session ${session.id.slice(0, 8)}: paint inside the hole, then render`);
    buildBrushControls();
    drawOverlay();
    renderStrip();
  } catch (error) {
    setStatus(error instanceof ApiError ? error.detail : String(error), "error");
  }
}

async function requestRender(): Promise<void> {
  if (!session) return;
  if (session.renderBusy) {
    setStatus("render already in flight", "warn");
    return;
  }
  setStatus("rendering...");
  try {
    const entry = await session.requestRender(api);
    renderStrip();
    setStatus(entry.duplicate
      ? `render ${entry.seq}: identical to the previous result (no edits since)`
      : `render ${entry.seq} added to the strip`);
  } catch (error) {
    const message = error instanceof ApiError ? error.detail : String(error);
    setStatus(`render failed: ${message} (edits kept; try again)`, "error");
  }
}

el<HTMLInputElement>("file-input").addEventListener("change", async (event) => {
  const file = (event.target as HTMLInputElement).files?.[0];
  if (!file) return;
  imagePngBytes = new Uint8Array(await file.arrayBuffer());
  baseImage = new Image();
  baseImage.onload = () => {
    stage.width = overlay.width = baseImage!.width;
    stage.height = overlay.height = baseImage!.height;
    session = null;
    holeRect = null;
    drawBase();
    drawOverlay();
    setStatus(`image ${baseImage!.width}x${baseImage!.height}: drag the hole rectangle`);
  };
  baseImage.src = URL.createObjectURL(file);
});

overlay.addEventListener("mousedown", (event) => {
  const point = canvasPoint(event);
  if (!session) {
    dragStart = point;
    return;
  }
  painting = true;
  session.layer.beginStroke();
  const changed = fillMode
    ? session.layer.floodFill(Math.floor(point.x), Math.floor(point.y), brushCategory)
    : session.layer.paint(point.x, point.y, brushRadius, brushCategory);
  if (changed === 0 && !fillMode) {
    setStatus("strokes outside the hole are ignored", "warn");
  }
  drawOverlay();
});

overlay.addEventListener("mousemove", (event) => {
  const point = canvasPoint(event);
  if (dragStart && baseImage && !session) {
    holeRect = normalizeDrag(dragStart.x, dragStart.y, point.x, point.y,
                             baseImage.width, baseImage.height);
    if (holeRect) {
      const status = protocolStatus(holeRect, baseImage.width, baseImage.height);
      setStatus(status === "in-range"
        ? `hole ${holeRect.w}x${holeRect.h}`
        : `hole ${holeRect.w}x${holeRect.h} is ${status} for the 1/8..1/2 protocol (still submittable)`,
        status === "in-range" ? "info" : "warn");
    }
    drawOverlay();
  } else if (painting && session && !fillMode) {
    session.layer.paint(point.x, point.y, brushRadius, brushCategory);
    drawOverlay();
  }
});

window.addEventListener("mouseup", () => {
  dragStart = null;
  if (painting && session) {
    session.layer.endStroke();
    painting = false;
  }
});

el<HTMLButtonElement>("start-button").addEventListener("click", startSession);
el<HTMLButtonElement>("render-button").addEventListener("click", requestRender);
el<HTMLButtonElement>("undo-button").addEventListener("click", () => {
  if (session?.layer.undo()) {
    drawOverlay();
    setStatus("undone");
  }
});
el<HTMLInputElement>("brush-size").addEventListener("input", (event) => {
  brushRadius = Number((event.target as HTMLInputElement).value);
});
el<HTMLInputElement>("fill-toggle").addEventListener("change", (event) => {
  fillMode = (event.target as HTMLInputElement).checked;
});

api.healthz()
  .then((body) => setStatus(`connected (model ${body.model_digest.slice(0, 10)}): load an image`))
  .catch(() => setStatus("service unreachable; start the server first", "error"));
