// Typed client for the session service. All truth (CBR, images, revisions)
// comes from service responses; the console never computes bandwidth itself.

export interface BandwidthReport {
  symbol_count: number;
  side_info_symbols: number;
  cbr: number;
  breakdown: Record<string, number>;
  image_width: number;
  image_height: number;
}

export interface SessionInfo {
  session_id: string;
  revision: number;
  mode: "dpct" | "cct";
  image_height: number;
  image_width: number;
  labels: string[];
  report: BandwidthReport;
}

export interface LabelEntry {
  name: string;
  rgb: [number, number, number];
  pixels: number;
  received: boolean;
}

export interface PromptResponse {
  session_id: string;
  revision: number;
  delivered: boolean;
  label?: string;
  stream_symbols?: number;
  notice?: string;
  report: BandwidthReport;
}

export interface DecodeResponse {
  session_id: string;
  revision: number;
  report: BandwidthReport;
  image_png_base64: string;
}

export interface ReportResponse {
  session_id: string;
  revision: number;
  prompts: string[];
  report: BandwidthReport;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!resp.ok) {
      const detail = await resp.text();
      throw new Error(`service ${resp.status} on ${path}: ${detail}`);
    }
    return (await resp.json()) as T;
  }

  createSession(mode: "dpct" | "cct", imageId = 0, seed = 0): Promise<SessionInfo> {
    return this.request<SessionInfo>("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ mode, image_id: imageId, seed }),
    });
  }

  labels(sessionId: string): Promise<{ session_id: string; revision: number; labels: LabelEntry[] }> {
    return this.request(`/sessions/${sessionId}/labels`);
  }

  prompt(sessionId: string, label: string): Promise<PromptResponse> {
    return this.request(`/sessions/${sessionId}/prompts`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ label }),
    });
  }

  decode(sessionId: string, body: { beta?: number; beta_map?: number[][] } = {}): Promise<DecodeResponse> {
    return this.request(`/sessions/${sessionId}/decode`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  report(sessionId: string): Promise<ReportResponse> {
    return this.request(`/sessions/${sessionId}/report`);
  }

  originalUrl(sessionId: string): string {
    return `${this.baseUrl}/sessions/${sessionId}/original.png`;
  }
}
