/** Typed client for the chat service's three endpoints. */

export interface ExecutionView {
  kind: string;
  text: string;
}

export interface FieldView {
  name: string;
  value: unknown;
  filled: boolean;
  confirmed: string;
}

export interface InstanceView {
  var: string;
  worksheet: string;
  kind: string;
  completed: boolean;
  result: unknown;
  fields: FieldView[];
}

export interface StateView {
  snapshot: string;
  turn_index: number;
  instances: InstanceView[];
}

export interface TurnPayload {
  reply: string;
  acts: string[];
  executions: ExecutionView[];
  state: StateView;
  error: string | null;
}

export interface CreatedSession {
  session_id: string;
  greeting?: string;
}

export interface TranscriptLine {
  speaker: "user" | "agent";
  text: string;
}

export interface SessionView {
  session_id: string;
  spec: string;
  state: StateView;
  transcript: TranscriptLine[];
}

export interface ApiError {
  code: string;
  message: string;
}

export class RequestFailed extends Error {
  constructor(public readonly status: number, public readonly detail: ApiError) {
    super(`${detail.code}: ${detail.message}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    const body = await response.json();
    if (!response.ok) {
      throw new RequestFailed(response.status, body as ApiError);
    }
    return body as T;
  }

  createSession(spec: string, backends?: Record<string, unknown>): Promise<CreatedSession> {
    return this.request<CreatedSession>("/api/sessions", {
      method: "POST",
      body: JSON.stringify({ spec, backends: backends ?? null }),
    });
  }

  takeTurn(sessionId: string, utterance: string): Promise<TurnPayload> {
    return this.request<TurnPayload>(`/api/sessions/${sessionId}/turns`, {
      method: "POST",
      body: JSON.stringify({ utterance }),
    });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request<SessionView>(`/api/sessions/${sessionId}`);
  }
}
