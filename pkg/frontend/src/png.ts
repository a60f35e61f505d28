/**
 * Minimal PNG codec for the payloads this editor exchanges with the server:
 * 8-bit grayscale label/mask layers (both directions) and 8-bit RGB uploads.
 * Canvas APIs cannot produce single-channel PNGs, so the label layer is
 * encoded here directly; deflate comes from the standard CompressionStream
 * (available in browsers and node alike). Decoding supports non-interlaced
 * 8-bit grayscale with all five scanline filters.
 */

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

async function pipe(data: Uint8Array, stream: CompressionStream | DecompressionStream): Promise<Uint8Array> {
  const blob = new Blob([data as BlobPart]);
  const out = await new Response(blob.stream().pipeThrough(stream as ReadableWritablePair<Uint8Array, Uint8Array>)).arrayBuffer();
  return new Uint8Array(out);
}

const deflate = (data: Uint8Array) => pipe(data, new CompressionStream("deflate"));
const inflate = (data: Uint8Array) => pipe(data, new DecompressionStream("deflate"));

function chunk(type: string, body: Uint8Array): Uint8Array {
  const out = new Uint8Array(12 + body.length);
  const view = new DataView(out.buffer);
  view.setUint32(0, body.length);
  for (let i = 0; i < 4; i++) {
    out[4 + i] = type.charCodeAt(i);
  }
  out.set(body, 8);
  view.setUint32(8 + body.length, crc32(out.subarray(4, 8 + body.length)));
  return out;
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const part of parts) {
    out.set(part, offset);
    offset += part.length;
  }
  return out;
}

function ihdr(width: number, height: number, colorType: number): Uint8Array {
  const body = new Uint8Array(13);
  const view = new DataView(body.buffer);
  view.setUint32(0, width);
  view.setUint32(4, height);
  body[8] = 8;          // bit depth
  body[9] = colorType;  // 0 = grayscale, 2 = rgb
  return chunk("IHDR", body);
}

async function encode(width: number, height: number, data: Uint8Array, channels: 1 | 3): Promise<Uint8Array> {
  if (data.length !== width * height * channels) {
    throw new Error(`pixel buffer is ${data.length} bytes, expected ${width * height * channels}`);
  }
  const stride = width * channels;
  const raw = new Uint8Array((stride + 1) * height);
  for (let y = 0; y < height; y++) {
    raw[y * (stride + 1)] = 0; // filter: none
    raw.set(data.subarray(y * stride, (y + 1) * stride), y * (stride + 1) + 1);
  }
  const idat = await deflate(raw);
  return concat([
    new Uint8Array(SIGNATURE),
    ihdr(width, height, channels === 1 ? 0 : 2),
    chunk("IDAT", idat),
    chunk("IEND", new Uint8Array(0)),
  ]);
}

export const encodeGray8 = (width: number, height: number, data: Uint8Array) =>
  encode(width, height, data, 1);

export const encodeRgb8 = (width: number, height: number, data: Uint8Array) =>
  encode(width, height, data, 3);

export interface GrayImage {
  width: number;
  height: number;
  data: Uint8Array;
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

export async function decodeGray8(bytes: Uint8Array): Promise<GrayImage> {
  for (let i = 0; i < 8; i++) {
    if (bytes[i] !== SIGNATURE[i]) {
      throw new Error("not a PNG file");
    }
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  let offset = 8;
  let width = 0;
  let height = 0;
  const idat: Uint8Array[] = [];
  while (offset < bytes.length) {
    const length = view.getUint32(offset);
    const type = String.fromCharCode(...bytes.subarray(offset + 4, offset + 8));
    const body = bytes.subarray(offset + 8, offset + 8 + length);
    if (type === "IHDR") {
      width = view.getUint32(offset + 8);
      height = view.getUint32(offset + 12);
      const bitDepth = body[8];
      const colorType = body[9];
      if (bitDepth !== 8 || colorType !== 0) {
        throw new Error(`unsupported PNG: bit depth ${bitDepth}, color type ${colorType} (need gray 8)`);
      }
      if (body[12] !== 0) {
        throw new Error("interlaced PNG not supported");
      }
    } else if (type === "IDAT") {
      idat.push(body);
    } else if (type === "IEND") {
      break;
    }
    offset += 12 + length;
  }
  if (!width || !height || idat.length === 0) {
    throw new Error("truncated PNG");
  }
  const raw = await inflate(concat(idat));
  const stride = width;
  const data = new Uint8Array(width * height);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const row = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const prev = y > 0 ? data.subarray((y - 1) * stride, y * stride) : null;
    const out = data.subarray(y * stride, (y + 1) * stride);
    for (let x = 0; x < stride; x++) {
      const a = x > 0 ? out[x - 1] : 0;       // left (bpp = 1)
      const b = prev ? prev[x] : 0;           // up
      const c = x > 0 && prev ? prev[x - 1] : 0;
      let value = row[x];
      switch (filter) {
        case 0: break;
        case 1: value += a; break;
        case 2: value += b; break;
        case 3: value += Math.floor((a + b) / 2); break;
        case 4: value += paeth(a, b, c); break;
        default: throw new Error(`unknown PNG filter ${filter}`);
      }
      out[x] = value & 0xff;
    }
  }
  return { width, height, data };
}
