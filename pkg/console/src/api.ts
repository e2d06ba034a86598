// Thin typed client over the service HTTP API. Errors are surfaced to the
// caller as ApiError (status + server detail) — no retries, no fallbacks.

import type {
  AnomalySummary,
  FeedbackResult,
  InterpretationView,
  MatchView,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly authToken?: string,
  ) {}

  private headers(): Record<string, string> {
    const h: Record<string, string> = { "content-type": "application/json" };
    if (this.authToken) h["x-auth-token"] = this.authToken;
    return h;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(this.baseUrl + path, {
      ...init,
      headers: { ...this.headers(), ...(init?.headers ?? {}) },
    });
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = (await res.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body: keep the status text
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  async health(): Promise<{ status: string }> {
    return this.request("/health");
  }

  async listAnomalies(status?: string): Promise<AnomalySummary[]> {
    const query = status ? `?status=${encodeURIComponent(status)}` : "";
    const body = await this.request<{ anomalies: AnomalySummary[] }>(
      `/anomalies${query}`,
    );
    return body.anomalies;
  }

  async interpretation(id: string): Promise<InterpretationView> {
    return this.request(`/anomalies/${id}/interpretation`);
  }

  async match(id: string): Promise<MatchView> {
    return this.request(`/match/${id}`);
  }

  async feedback(
    id: string,
    label: string,
    overwrite = false,
  ): Promise<FeedbackResult> {
    return this.request("/feedback", {
      method: "POST",
      body: JSON.stringify({ anomaly_id: id, label, overwrite }),
    });
  }
}
