import type { HistoryEntry, RenderResult, SessionCreated, SessionState } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`${status}: ${detail}`);
  }
}

async function raise(response: Response): Promise<never> {
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(response.status, detail);
}

/** Thin typed client over the editing service's HTTP contract. */
export class EditorApi {
  constructor(private baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async healthz(): Promise<{ ok: boolean; model_digest: string }> {
    const response = await fetch(this.url("/healthz"));
    if (!response.ok) await raise(response);
    return response.json();
  }

  async createSession(imagePng: Uint8Array, maskPng: Uint8Array): Promise<SessionCreated> {
    const form = new FormData();
    form.append("image", new Blob([imagePng as BlobPart], { type: "image/png" }), "image.png");
    form.append("mask", new Blob([maskPng as BlobPart], { type: "image/png" }), "mask.png");
    const response = await fetch(this.url("/sessions"), { method: "POST", body: form });
    if (!response.ok) await raise(response);
    return response.json();
  }

  async getSession(id: string): Promise<SessionState> {
    const response = await fetch(this.url(`/sessions/${id}`));
    if (!response.ok) await raise(response);
    return response.json();
  }

  async getLabels(id: string): Promise<Uint8Array> {
    const response = await fetch(this.url(`/sessions/${id}/labels`));
    if (!response.ok) await raise(response);
    return new Uint8Array(await response.arrayBuffer());
  }

  async putLabels(id: string, labelsPng: Uint8Array): Promise<void> {
    const response = await fetch(this.url(`/sessions/${id}/labels`), {
      method: "PUT",
      headers: { "content-type": "image/png" },
      body: labelsPng as BodyInit,
    });
    if (!response.ok) await raise(response);
  }

  async render(id: string): Promise<RenderResult> {
    const response = await fetch(this.url(`/sessions/${id}/render`), { method: "POST" });
    if (!response.ok) await raise(response);
    return response.json();
  }

  async history(id: string): Promise<HistoryEntry[]> {
    const response = await fetch(this.url(`/sessions/${id}/history`));
    if (!response.ok) await raise(response);
    return response.json();
  }
}

export function b64ToBytes(payload: string): Uint8Array {
  if (typeof Buffer !== "undefined") {
    return new Uint8Array(Buffer.from(payload, "base64"));
  }
  const bin = atob(payload);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}
