// Realism brush: paints per-region detail levels on the latent-resolution
// grid. Values clamp to [0, betaMax]; the preview upscales nearest-pixel so
// what is painted is exactly what the decoder receives.

export class BetaBrush {
  readonly values: number[][];
  private clampNotices = 0;

  constructor(
    readonly rows: number,
    readonly cols: number,
    readonly betaMax: number,
    fill = 0,
  ) {
    if (rows <= 0 || cols <= 0) throw new Error("brush grid must be non-empty");
    if (betaMax <= 0) throw new Error("betaMax must be positive");
    this.values = Array.from({ length: rows }, () => Array(cols).fill(Math.min(Math.max(fill, 0), betaMax)));
  }

  get noticeCount(): number {
    return this.clampNotices;
  }

  /** Paint a circular stroke; out-of-range values clamp with a notice. */
  paint(row: number, col: number, radius: number, value: number): void {
    let painted = value;
    if (value < 0 || value > this.betaMax) {
      painted = Math.min(Math.max(value, 0), this.betaMax);
      this.clampNotices += 1;
    }
    const r2 = radius * radius;
    for (let i = 0; i < this.rows; i++) {
      for (let j = 0; j < this.cols; j++) {
        const di = i - row;
        const dj = j - col;
        if (di * di + dj * dj <= r2) this.values[i][j] = painted;
      }
    }
  }

  fillAll(value: number): void {
    this.paint(0, 0, this.rows + this.cols, value);
  }

  /** Latent-grid payload for a decode request. */
  toBetaMap(): number[][] {
    return this.values.map((row) => [...row]);
  }

  /** Nearest-pixel upscale for the on-screen preview. */
  preview(scale: number): number[][] {
    const out: number[][] = [];
    for (let i = 0; i < this.rows * scale; i++) {
      const srcRow = this.values[Math.floor(i / scale)];
      const row: number[] = [];
      for (let j = 0; j < this.cols * scale; j++) {
        row.push(srcRow[Math.floor(j / scale)]);
      }
      out.push(row);
    }
    return out;
  }
}
