/** Binary netpbm codecs and base64 helpers, dependency-free so they run
 * identically in the browser and under node-based tests. */

const B64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

export function bytesToBase64(bytes: Uint8Array): string {
  let out = "";
  let i = 0;
  for (; i + 2 < bytes.length; i += 3) {
    const n = (bytes[i]! << 16) | (bytes[i + 1]! << 8) | bytes[i + 2]!;
    out += B64[(n >> 18) & 63]! + B64[(n >> 12) & 63]! + B64[(n >> 6) & 63]! + B64[n & 63]!;
  }
  const rest = bytes.length - i;
  if (rest === 1) {
    const n = bytes[i]! << 16;
    out += B64[(n >> 18) & 63]! + B64[(n >> 12) & 63]! + "==";
  } else if (rest === 2) {
    const n = (bytes[i]! << 16) | (bytes[i + 1]! << 8);
    out += B64[(n >> 18) & 63]! + B64[(n >> 12) & 63]! + B64[(n >> 6) & 63]! + "=";
  }
  return out;
}

const B64_INDEX = new Map<string, number>([...B64].map((ch, i) => [ch, i]));

export function base64ToBytes(s: string): Uint8Array {
  if (s.length % 4 !== 0) {
    throw new Error(`base64 length ${s.length} is not a multiple of 4`);
  }
  let pad = 0;
  if (s.endsWith("==")) pad = 2;
  else if (s.endsWith("=")) pad = 1;
  const body = s.slice(0, s.length - pad);
  const out = new Uint8Array((s.length / 4) * 3 - pad);
  let o = 0;
  let acc = 0;
  let bits = 0;
  for (const ch of body) {
    const v = B64_INDEX.get(ch);
    if (v === undefined) {
      throw new Error(`invalid base64 character ${JSON.stringify(ch)}`);
    }
    acc = (acc << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out[o++] = (acc >> bits) & 0xff;
    }
  }
  return out;
}

export interface GrayImage {
  width: number;
  height: number;
  pixels: Uint8Array; // row-major, one byte per pixel
}

/** Serialize RGBA pixels (canvas ImageData layout) as binary P6, canonical
 * header `P6\n<w> <h>\n255\n`. The alpha channel is dropped. */
export function encodePpm(
  rgba: Uint8ClampedArray | Uint8Array,
  width: number,
  height: number,
): Uint8Array {
  if (rgba.length !== width * height * 4) {
    throw new Error(`expected ${width * height * 4} RGBA bytes, got ${rgba.length}`);
  }
  const header = new TextEncoder().encode(`P6\n${width} ${height}\n255\n`);
  const out = new Uint8Array(header.length + width * height * 3);
  out.set(header, 0);
  let o = header.length;
  for (let i = 0; i < rgba.length; i += 4) {
    out[o++] = rgba[i]!;
    out[o++] = rgba[i + 1]!;
    out[o++] = rgba[i + 2]!;
  }
  return out;
}

/** Tokenize a netpbm header: fields are whitespace-separated, `#` starts a
 * comment running to end of line, and a single whitespace byte separates the
 * maxval from the payload. */
function readHeader(bytes: Uint8Array, magic: string): { fields: number[]; offset: number } {
  if (bytes.length < 2 || String.fromCharCode(bytes[0]!, bytes[1]!) !== magic) {
    throw new Error(`not a ${magic} file`);
  }
  const fields: number[] = [];
  let i = 2;
  while (fields.length < 3) {
    while (i < bytes.length) {
      const b = bytes[i]!;
      if (b === 0x23) {
        // comment
        while (i < bytes.length && bytes[i] !== 0x0a) i++;
      } else if (b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d) {
        i++;
      } else {
        break;
      }
    }
    let start = i;
    while (i < bytes.length && bytes[i]! >= 0x30 && bytes[i]! <= 0x39) i++;
    if (i === start) {
      throw new Error("malformed netpbm header");
    }
    fields.push(Number(new TextDecoder().decode(bytes.subarray(start, i))));
  }
  if (i >= bytes.length) {
    throw new Error("truncated netpbm header");
  }
  return { fields, offset: i + 1 }; // single whitespace byte after maxval
}

/** Parse binary P5 bytes into width/height and a flat pixel array. */
export function decodePgm(bytes: Uint8Array): GrayImage {
  const { fields, offset } = readHeader(bytes, "P5");
  const [width, height, maxval] = fields as [number, number, number];
  if (maxval !== 255) {
    throw new Error(`unsupported maxval ${maxval} (only 255)`);
  }
  if (width < 1 || height < 1) {
    throw new Error(`bad dimensions ${width}x${height}`);
  }
  const payload = bytes.subarray(offset);
  if (payload.length !== width * height) {
    throw new Error(`payload size ${payload.length} != expected ${width * height}`);
  }
  return { width, height, pixels: new Uint8Array(payload) };
}

/** Parse binary P6 bytes into width/height and flat RGB pixels. */
export function decodePpm(bytes: Uint8Array): { width: number; height: number; rgb: Uint8Array } {
  const { fields, offset } = readHeader(bytes, "P6");
  const [width, height, maxval] = fields as [number, number, number];
  if (maxval !== 255) {
    throw new Error(`unsupported maxval ${maxval} (only 255)`);
  }
  if (width < 1 || height < 1) {
    throw new Error(`bad dimensions ${width}x${height}`);
  }
  const payload = bytes.subarray(offset);
  if (payload.length !== width * height * 3) {
    throw new Error(`payload size ${payload.length} != expected ${width * height * 3}`);
  }
  return { width, height, rgb: new Uint8Array(payload) };
}
