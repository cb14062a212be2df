/** Binary PGM (P5) encode/decode plus grayscale conversion, so any image
 * the browser can draw is uploaded in the service's single ingestion
 * format. */

export interface GrayImage {
  width: number;
  height: number;
  pixels: Uint8Array; // row-major, one byte per pixel
}

export function encodePgm(img: GrayImage): Uint8Array {
  if (img.pixels.length !== img.width * img.height) {
    throw new Error(`pixel count ${img.pixels.length} does not match ` +
      `${img.width}x${img.height}`);
  }
  const header = new TextEncoder().encode(`P5\n${img.width} ${img.height}\n255\n`);
  const out = new Uint8Array(header.length + img.pixels.length);
  out.set(header, 0);
  out.set(img.pixels, header.length);
  return out;
}

const WHITESPACE = new Set([0x20, 0x09, 0x0a, 0x0d, 0x0b, 0x0c]);

export function decodePgm(data: Uint8Array): GrayImage {
  if (data[0] !== 0x50 || data[1] !== 0x35) { // "P5"
    throw new Error("not a binary PGM (P5) payload");
  }
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < data.length && WHITESPACE.has(data[pos])) pos++;
    const start = pos;
    while (pos < data.length && !WHITESPACE.has(data[pos])) pos++;
    if (start === pos) throw new Error(`truncated PGM header at byte ${start}`);
    const token = new TextDecoder().decode(data.subarray(start, pos));
    const value = Number(token);
    if (!Number.isInteger(value)) throw new Error(`bad header token '${token}'`);
    fields.push(value);
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new Error(`unsupported maxval ${maxval}`);
  const expected = width * height;
  const payload = data.subarray(pos, pos + expected);
  if (payload.length < expected) {
    throw new Error(`PGM payload truncated at byte ${pos + payload.length}`);
  }
  return { width, height, pixels: new Uint8Array(payload) };
}

const B64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

export function base64ToBytes(b64: string): Uint8Array {
  const clean = b64.replace(/=+$/, "");
  const out = new Uint8Array(Math.floor((clean.length * 3) / 4));
  let buffer = 0, bits = 0, pos = 0;
  for (const ch of clean) {
    const value = B64.indexOf(ch);
    if (value < 0) throw new Error(`invalid base64 character '${ch}'`);
    buffer = (buffer << 6) | value;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out[pos++] = (buffer >> bits) & 0xff;
    }
  }
  return out;
}

export function decodeBase64Pgm(b64: string): GrayImage {
  return decodePgm(base64ToBytes(b64));
}

/** ITU-R BT.601 luminance from canvas RGBA data. */
export function grayscaleFromRgba(rgba: Uint8ClampedArray, width: number,
                                  height: number): GrayImage {
  if (rgba.length !== width * height * 4) {
    throw new Error(`RGBA length ${rgba.length} does not match ${width}x${height}`);
  }
  const pixels = new Uint8Array(width * height);
  for (let i = 0; i < pixels.length; i++) {
    const r = rgba[4 * i], g = rgba[4 * i + 1], b = rgba[4 * i + 2];
    pixels[i] = Math.round(0.299 * r + 0.587 * g + 0.114 * b);
  }
  return { width, height, pixels };
}
