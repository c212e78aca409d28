// Decoder for the run-length label-map wire format served by the session
// service, plus region hit-testing for click-to-prompt. Layout (little
// endian): u32 width, u32 height, u16 palette size, palette entries of
// 3 x u8 RGB + u8 name length + UTF-8 name, u32 run count, runs of
// u32 length + u16 palette index covering the row-major pixel sequence.

export interface LabelMapData {
  width: number;
  height: number;
  names: string[];
  colors: [number, number, number][];
  /** palette index per pixel, row-major */
  indices: Uint16Array;
}

export function decodeLabelMap(buffer: ArrayBuffer): LabelMapData {
  const view = new DataView(buffer);
  let pos = 0;
  const width = view.getUint32(pos, true); pos += 4;
  const height = view.getUint32(pos, true); pos += 4;
  const paletteSize = view.getUint16(pos, true); pos += 2;
  const names: string[] = [];
  const colors: [number, number, number][] = [];
  const utf8 = new TextDecoder();
  for (let i = 0; i < paletteSize; i++) {
    const r = view.getUint8(pos); const g = view.getUint8(pos + 1); const b = view.getUint8(pos + 2);
    const nameLen = view.getUint8(pos + 3); pos += 4;
    names.push(utf8.decode(new Uint8Array(buffer, pos, nameLen))); pos += nameLen;
    colors.push([r, g, b]);
  }
  const runCount = view.getUint32(pos, true); pos += 4;
  const indices = new Uint16Array(width * height);
  let cursor = 0;
  for (let i = 0; i < runCount; i++) {
    const length = view.getUint32(pos, true); pos += 4;
    const palette = view.getUint16(pos, true); pos += 2;
    indices.fill(palette, cursor, cursor + length);
    cursor += length;
  }
  if (cursor !== width * height) {
    throw new Error(`runs cover ${cursor} pixels, expected ${width * height}`);
  }
  return { width, height, names, colors, indices };
}

/** Instance label under a pixel coordinate, for click-to-prompt. */
export function labelAt(map: LabelMapData, x: number, y: number): string {
  if (x < 0 || y < 0 || x >= map.width || y >= map.height) {
    throw new Error(`coordinate (${x}, ${y}) outside ${map.width}x${map.height} map`);
  }
  return map.names[map.indices[y * map.width + x]];
}

/** RGBA pixels for rendering the overlay onto a canvas. */
export function toRgba(map: LabelMapData, alpha = 255): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(new ArrayBuffer(map.width * map.height * 4));
  for (let i = 0; i < map.indices.length; i++) {
    const [r, g, b] = map.colors[map.indices[i]];
    out[4 * i] = r;
    out[4 * i + 1] = g;
    out[4 * i + 2] = b;
    out[4 * i + 3] = alpha;
  }
  return out;
}
