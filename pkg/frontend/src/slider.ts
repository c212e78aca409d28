// Before/after comparison slider: a draggable divider over a pixel-aligned
// pair. Pure geometry here; rendering lives in main.ts.

export interface SliderGeometry {
  /** divider x offset in pixels from the left edge */
  dividerX: number;
  /** clip width of the left (original) image in pixels */
  leftClipWidth: number;
}

export class ComparisonSlider {
  private positionPct: number;

  constructor(initialPct = 50) {
    this.positionPct = ComparisonSlider.clampPct(initialPct);
  }

  static clampPct(pct: number): number {
    return Math.max(0, Math.min(100, pct));
  }

  get position(): number {
    return this.positionPct;
  }

  set position(pct: number) {
    this.positionPct = ComparisonSlider.clampPct(pct);
  }

  /** Update from a pointer x coordinate relative to the container. */
  dragTo(clientX: number, containerLeft: number, containerWidth: number): number {
    if (containerWidth <= 0) return this.positionPct;
    const x = Math.max(0, Math.min(clientX - containerLeft, containerWidth));
    this.positionPct = (x / containerWidth) * 100;
    return this.positionPct;
  }

  geometry(containerWidth: number): SliderGeometry {
    const dividerX = (this.positionPct / 100) * containerWidth;
    return { dividerX, leftClipWidth: dividerX };
  }

  /** Sizes must match for a seamless split; mismatches letterbox with a warning. */
  static checkAligned(
    a: { width: number; height: number },
    b: { width: number; height: number },
  ): { aligned: boolean; warning?: string } {
    if (a.width === b.width && a.height === b.height) return { aligned: true };
    return {
      aligned: false,
      warning: `image sizes differ (${a.width}x${a.height} vs ${b.width}x${b.height}); letterboxing`,
    };
  }
}
