// Thin client for the study server's HTTP JSON API.

export interface SessionInfo {
  session_id: string;
  total: number;
  cursor: number;
}

export interface NextPair {
  done: boolean;
  pair_id?: string;
  index?: number;
  total?: number;
  blinded?: boolean;
  original_url?: string;
  perturbed_url?: string;
}

export interface SubmitAck {
  ok: boolean;
  pair_id: string;
  cursor: number;
  total: number;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class StudyClient {
  constructor(private baseUrl: string, private fetchFn: typeof fetch = fetch) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (body && body.detail) detail = JSON.stringify(body.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  createSession(participantTag: string, seed: number): Promise<SessionInfo> {
    return this.request<SessionInfo>("/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ participant_tag: participantTag, seed }),
    });
  }

  nextPair(sessionId: string): Promise<NextPair> {
    return this.request<NextPair>(`/sessions/${sessionId}/next`);
  }

  submitRating(
    sessionId: string,
    pairId: string,
    rating: number,
    listenCount: number
  ): Promise<SubmitAck> {
    return this.request<SubmitAck>(`/sessions/${sessionId}/ratings`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ pair_id: pairId, rating, listen_count: listenCount }),
    });
  }

  exportCsv(): Promise<string> {
    return this.fetchFn(this.baseUrl + "/export.csv").then((r) => r.text());
  }

  audioUrl(path: string): string {
    return this.baseUrl + path;
  }
}
