// Session view state. The console is stateless with respect to truth: the
// CBR meter and images always mirror the latest service response, keyed by
// its revision counter, and stale responses are dropped.

import type { BandwidthReport, DecodeResponse, PromptResponse, SessionInfo } from "./api.js";

export interface MeterState {
  cbr: number;
  symbolCount: number;
  sideInfoSymbols: number;
  breakdown: Record<string, number>;
}

export class SessionView {
  readonly sessionId: string;
  readonly mode: "dpct" | "cct";
  readonly labels: string[];
  received = new Set<string>();
  revision: number;
  meter: MeterState;
  imagePngBase64: string | null = null;
  private decodeInFlight = false;
  private pendingDecode: (() => Promise<DecodeResponse>) | null = null;

  constructor(info: SessionInfo) {
    this.sessionId = info.session_id;
    this.mode = info.mode;
    this.labels = info.labels ?? [];
    this.revision = info.revision;
    this.meter = SessionView.meterFrom(info.report);
  }

  static meterFrom(report: BandwidthReport): MeterState {
    return {
      cbr: report.cbr,
      symbolCount: report.symbol_count,
      sideInfoSymbols: report.side_info_symbols,
      breakdown: { ...report.breakdown },
    };
  }

  private accept(revision: number, report: BandwidthReport): boolean {
    if (revision < this.revision) return false; // stale response
    this.revision = revision;
    this.meter = SessionView.meterFrom(report);
    return true;
  }

  applyPrompt(resp: PromptResponse): boolean {
    if (resp.delivered && resp.label) {
      this.received.add(resp.label);
    }
    // duplicate prompts keep the old revision; the report is still current
    return this.accept(resp.revision, resp.report);
  }

  applyDecode(resp: DecodeResponse): boolean {
    const fresh = this.accept(resp.revision, resp.report);
    if (fresh) this.imagePngBase64 = resp.image_png_base64;
    return fresh;
  }

  isReceived(label: string): boolean {
    return this.received.has(label);
  }

  pendingLabels(): string[] {
    return this.labels.filter((l) => !this.received.has(l));
  }

  // One decode request in flight per session; newer requests supersede any
  // queued one (brush strokes debounce to the latest map).
  async requestDecode(run: () => Promise<DecodeResponse>): Promise<DecodeResponse | null> {
    if (this.decodeInFlight) {
      this.pendingDecode = run;
      return null;
    }
    this.decodeInFlight = true;
    try {
      let resp = await run();
      this.applyDecode(resp);
      while (this.pendingDecode) {
        const next = this.pendingDecode;
        this.pendingDecode = null;
        resp = await next();
        this.applyDecode(resp);
      }
      return resp;
    } finally {
      this.decodeInFlight = false;
    }
  }
}
