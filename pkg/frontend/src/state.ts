// View state for one chat session. The store owns the two invariants the
// rest of the app leans on: message indices are strictly increasing, and
// at most one request is pending at a time (input stays disabled while
// pending). Everything is plain data so tests can drive it directly.

import type { ConnectionStatus, DebugCandidate, Speaker, TranscriptTurn } from './types.js';

export interface Message {
  speaker: Speaker;
  text: string;
  index: number;
}

export type Listener = (state: ChatViewState) => void;

export class ChatViewState {
  sessionId: string | null = null;
  messages: Message[] = [];
  pending = false;
  debug: DebugCandidate[] = [];
  connection: ConnectionStatus = 'connecting';
  banner: string | null = null;

  private listeners: Listener[] = [];

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this);
  }

  get nextIndex(): number {
    return this.messages.length ? this.messages[this.messages.length - 1].index + 1 : 0;
  }

  get inputEnabled(): boolean {
    return !this.pending && this.connection === 'open' && this.sessionId !== null;
  }

  startSession(sessionId: string): void {
    this.sessionId = sessionId;
    this.messages = [];
    this.debug = [];
    this.pending = false;
    this.banner = null;
    this.emit();
  }

  appendMessage(speaker: Speaker, text: string, index: number): void {
    if (index < this.nextIndex) {
      throw new Error(`message index ${index} not increasing (next is ${this.nextIndex})`);
    }
    this.messages.push({ speaker, text, index });
    this.emit();
  }

  beginPending(): void {
    if (this.pending) {
      throw new Error('a request is already pending');
    }
    this.pending = true;
    this.emit();
  }

  endPending(): void {
    this.pending = false;
    this.emit();
  }

  setDebug(candidates: DebugCandidate[]): void {
    const chosen = candidates.filter((c) => c.chosen).length;
    if (candidates.length > 0 && chosen !== 1) {
      throw new Error(`debug panel needs exactly one chosen candidate, got ${chosen}`);
    }
    this.debug = candidates;
    this.emit();
  }

  setConnection(status: ConnectionStatus, banner: string | null = null): void {
    this.connection = status;
    this.banner = banner;
    this.emit();
  }

  /** Replace the local transcript with the server's (resync after reconnect). */
  resetFromTranscript(turns: TranscriptTurn[]): void {
    const sorted = [...turns].sort((a, b) => a.index - b.index);
    sorted.forEach((t, i) => {
      if (t.index !== i) throw new Error(`server transcript has a gap at ${i}`);
    });
    this.messages = sorted.map((t) => ({ speaker: t.speaker, text: t.text, index: t.index }));
    this.emit();
  }
}
