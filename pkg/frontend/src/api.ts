// Thin REST client over the documented endpoints. The fetch function is
// injectable so tests can mock the network without a DOM.

import type { DebugCandidate, TranscriptTurn } from './types.js';

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/$/, '');
  }

  wsUrl(sessionId: string): string {
    const http = new URL(this.baseUrl);
    const scheme = http.protocol === 'https:' ? 'wss:' : 'ws:';
    return `${scheme}//${http.host}/api/sessions/${sessionId}/stream`;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, {
      method,
      headers: body === undefined ? undefined : { 'Content-Type': 'application/json' },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) {
      let detail = `${resp.status}`;
      try {
        const data = await resp.json();
        if (data && typeof data.error === 'string') detail = data.error;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  async createSession(): Promise<string> {
    const data = await this.request<{ session_id: string }>('POST', '/api/sessions');
    return data.session_id;
  }

  async fetchTranscript(sessionId: string): Promise<TranscriptTurn[]> {
    const data = await this.request<{ turns: TranscriptTurn[] }>(
      'GET',
      `/api/sessions/${sessionId}/transcript`,
    );
    return data.turns;
  }

  async fetchDebug(sessionId: string): Promise<DebugCandidate[]> {
    const data = await this.request<{ candidates: DebugCandidate[] }>(
      'GET',
      `/api/sessions/${sessionId}/debug`,
    );
    return data.candidates;
  }

  async health(): Promise<boolean> {
    try {
      const resp = await this.fetchFn(this.baseUrl + '/healthz');
      return resp.ok;
    } catch {
      return false;
    }
  }
}
