/** View model for one chat session: messages, per-turn debug payloads, and the
 * one-in-flight-turn gate. Every displayed fact comes from server payloads. */

import { ApiClient, TurnPayload } from "./api.js";

export interface Message {
  speaker: "user" | "agent";
  text: string;
  turn: number | null; // agent turns link to a debug payload index
}

export type ConnectionStatus = "idle" | "connecting" | "ready" | "error";

export class ChatViewModel {
  messages: Message[] = [];
  debug: TurnPayload[] = [];
  selectedTurn: number | null = null;
  sessionId: string | null = null;
  status: ConnectionStatus = "idle";
  statusDetail = "";
  inFlight = false;
  pendingRetry: string | null = null;
  onChange: () => void = () => {};

  constructor(private readonly api: ApiClient) {}

  private changed(): void {
    this.onChange();
  }

  async start(spec: string, backends?: Record<string, unknown>): Promise<boolean> {
    this.status = "connecting";
    this.changed();
    try {
      const created = await this.api.createSession(spec, backends);
      this.sessionId = created.session_id;
      this.status = "ready";
      this.statusDetail = "";
      if (created.greeting) {
        this.messages.push({ speaker: "agent", text: created.greeting, turn: null });
      }
      this.changed();
      return true;
    } catch (err) {
      this.status = "error";
      this.statusDetail = err instanceof Error ? err.message : String(err);
      this.changed();
      return false;
    }
  }

  get canSend(): boolean {
    return this.status === "ready" && !this.inFlight && this.sessionId !== null;
  }

  async send(text: string): Promise<boolean> {
    const trimmed = text.trim();
    if (!trimmed || !this.canSend || this.sessionId === null) {
      return false;
    }
    // optimistic user bubble; on failure the text is kept for retry, never re-queued
    this.messages.push({ speaker: "user", text: trimmed, turn: null });
    return this.dispatch(trimmed);
  }

  async retry(): Promise<boolean> {
    if (this.pendingRetry === null || this.inFlight || this.sessionId === null) {
      return false;
    }
    return this.dispatch(this.pendingRetry);
  }

  private async dispatch(text: string): Promise<boolean> {
    this.inFlight = true;
    this.changed();
    try {
      const payload = await this.api.takeTurn(this.sessionId as string, text);
      const turnIndex = this.debug.length;
      this.debug.push(payload);
      this.messages.push({ speaker: "agent", text: payload.reply, turn: turnIndex });
      this.selectedTurn = turnIndex;
      this.pendingRetry = null;
      return true;
    } catch (err) {
      this.pendingRetry = text;
      this.statusDetail = err instanceof Error ? err.message : String(err);
      return false;
    } finally {
      this.inFlight = false;
      this.changed();
    }
  }

  selectTurn(index: number): void {
    if (index >= 0 && index < this.debug.length) {
      this.selectedTurn = index;
      this.changed();
    }
  }

  get selectedPayload(): TurnPayload | null {
    return this.selectedTurn === null ? null : this.debug[this.selectedTurn] ?? null;
  }

  /** Field currently being asked for, parsed from the selected turn's acts. */
  askTarget(): { instance: string; field: string } | null {
    const payload = this.selectedPayload;
    if (!payload) {
      return null;
    }
    for (const act of payload.acts) {
      const match = /^AskField\(([^,]+), ([^)]+)\)$/.exec(act);
      if (match) {
        return { instance: match[1], field: match[2] };
      }
    }
    return null;
  }
}
