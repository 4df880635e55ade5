// Reconnecting WebSocket wrapper for the message stream. The socket
// constructor is injectable so tests can run a scripted fake. On every
// successful reopen the onReconnect callback fires, which the controller
// uses to resync the transcript from the server.

import type { ServerFrame } from './types.js';

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ChatSocketHandlers {
  onFrame: (frame: ServerFrame) => void;
  onStatus: (status: 'connecting' | 'open' | 'reconnecting' | 'down') => void;
  onReconnect: () => void;
}

const MAX_BACKOFF_MS = 5000;

export class ChatSocket {
  private socket: SocketLike | null = null;
  private closed = false;
  private attempts = 0;
  private everOpened = false;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private url: string,
    private handlers: ChatSocketHandlers,
    private factory: SocketFactory = (u) => new WebSocket(u) as unknown as SocketLike,
    private maxAttempts = 8,
  ) {}

  connect(): void {
    this.handlers.onStatus(this.attempts === 0 ? 'connecting' : 'reconnecting');
    const sock = this.factory(this.url);
    this.socket = sock;
    sock.onopen = () => {
      const reopened = this.everOpened;
      this.everOpened = true;
      this.attempts = 0;
      this.handlers.onStatus('open');
      if (reopened) this.handlers.onReconnect();
    };
    sock.onmessage = (ev) => {
      let frame: ServerFrame;
      try {
        frame = JSON.parse(ev.data) as ServerFrame;
      } catch {
        return; // not a protocol frame; ignore
      }
      this.handlers.onFrame(frame);
    };
    sock.onclose = () => this.scheduleReconnect();
    sock.onerror = () => {
      // some implementations fire error without close; close() forces it
      try {
        sock.close();
      } catch {
        /* already closing */
      }
    };
  }

  backoffMs(): number {
    return Math.min(MAX_BACKOFF_MS, 250 * 2 ** this.attempts);
  }

  private scheduleReconnect(): void {
    if (this.closed) return;
    if (this.attempts >= this.maxAttempts) {
      this.handlers.onStatus('down');
      return;
    }
    const delay = this.backoffMs();
    this.attempts += 1;
    this.handlers.onStatus('reconnecting');
    this.reconnectTimer = setTimeout(() => this.connect(), delay);
  }

  send(text: string): void {
    if (!this.socket) throw new Error('socket not connected');
    this.socket.send(JSON.stringify({ text }));
  }

  close(): void {
    this.closed = true;
    if (this.reconnectTimer !== null) clearTimeout(this.reconnectTimer);
    this.socket?.close();
  }
}
