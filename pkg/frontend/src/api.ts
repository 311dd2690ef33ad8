/**
 * Thin typed client for the optimization service.
 *
 * All methods resolve with parsed payloads; non-2xx responses other than
 * the documented 409/422 select outcomes reject with ApiError so callers
 * can surface a banner instead of rendering stale data.
 */

import type {
  AcquisitionProfile,
  HistoryRecord,
  ParameterInfo,
  RunState,
  SelectResult,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly url: string,
    message: string,
  ) {
    super(`${status} ${url}: ${message}`);
  }
}

export class ApiClient {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly baseUrl: string,
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
  }

  private async getJson<T>(path: string): Promise<T> {
    const url = `${this.baseUrl}${path}`;
    const resp = await this.fetchFn(url);
    if (!resp.ok) {
      throw new ApiError(resp.status, url, await resp.text());
    }
    return (await resp.json()) as T;
  }

  async createRun(config: unknown): Promise<{ run_id: string; mode: string }> {
    const url = `${this.baseUrl}/runs`;
    const resp = await this.fetchFn(url, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(config),
    });
    if (!resp.ok) {
      throw new ApiError(resp.status, url, await resp.text());
    }
    return (await resp.json()) as { run_id: string; mode: string };
  }

  getState(runId: string): Promise<RunState> {
    return this.getJson(`/runs/${runId}/state`);
  }

  getAcquisition(runId: string): Promise<AcquisitionProfile> {
    return this.getJson(`/runs/${runId}/acquisition`);
  }

  async getParameters(runId: string): Promise<ParameterInfo[]> {
    const body = await this.getJson<{ parameters: ParameterInfo[] }>(
      `/runs/${runId}/parameters`,
    );
    return body.parameters;
  }

  async getHistory(runId: string): Promise<HistoryRecord[]> {
    const body = await this.getJson<{ records: HistoryRecord[] }>(
      `/runs/${runId}/history`,
    );
    return body.records;
  }

  /** Submit the operator's next design point; 409/422 are normal outcomes. */
  async select(
    runId: string,
    point: Record<string, number>,
  ): Promise<SelectResult> {
    const url = `${this.baseUrl}/runs/${runId}/select`;
    const resp = await this.fetchFn(url, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(point),
    });
    if (resp.status === 202) {
      return { kind: "queued", point };
    }
    if (resp.status === 422) {
      const body = (await resp.json()) as { errors: Record<string, string> };
      return { kind: "invalid", errors: body.errors };
    }
    if (resp.status === 409) {
      const body = (await resp.json()) as { error: string };
      return { kind: "conflict", message: body.error };
    }
    throw new ApiError(resp.status, url, await resp.text());
  }

  async stop(runId: string): Promise<void> {
    const url = `${this.baseUrl}/runs/${runId}/stop`;
    const resp = await this.fetchFn(url, { method: "POST" });
    if (!resp.ok) {
      throw new ApiError(resp.status, url, await resp.text());
    }
  }
}
