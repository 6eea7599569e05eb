// Thin typed client over the service's HTTP+JSON API. All model work happens
// server-side; the client never invents document content.

import type {
  GenerateRequest,
  GenerateResponse,
  InfillRequest,
  InfillResponse,
  ModelsResponse,
  TraceEvent,
} from "./types.js";
import { followTrace } from "./stream.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(
    public readonly status: number,
    public readonly payload: unknown,
    public readonly request: unknown,
  ) {
    super(`service error ${status}: ${JSON.stringify(payload)}`);
  }
}

export class StudioClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    const payload = await response.json();
    if (!response.ok) {
      throw new ServiceError(response.status, payload, body);
    }
    return payload as T;
  }

  async models(): Promise<ModelsResponse> {
    const response = await this.fetchFn(`${this.baseUrl}/v1/models`);
    return (await response.json()) as ModelsResponse;
  }

  async generate(request: GenerateRequest): Promise<GenerateResponse> {
    return this.post<GenerateResponse>("/v1/generate", request);
  }

  async infill(request: InfillRequest): Promise<InfillResponse> {
    return this.post<InfillResponse>("/v1/infill", request);
  }

  async syllables(text: string): Promise<[string, number][]> {
    const payload = await this.post<{ counts: [string, number][] }>(
      "/v1/syllables",
      { text },
    );
    return payload.counts;
  }

  async stream(sessionId: string, onEvent: (event: TraceEvent) => void): Promise<void> {
    const response = await this.fetchFn(
      `${this.baseUrl}/v1/generate/stream?session=${encodeURIComponent(sessionId)}`,
    );
    if (!response.ok) {
      throw new ServiceError(response.status, await response.json(), sessionId);
    }
    await followTrace(response, onEvent);
  }
}
