// Session controller: owns the view state, the REST client, and the
// reconnecting socket. Messages go out over the WebSocket one at a time;
// rapid sends queue up and are delivered sequentially so the transcript
// order always matches the server's.

import { ApiClient } from './api.js';
import { ChatViewState } from './state.js';
import { ChatSocket, type SocketFactory } from './ws.js';
import { isErrorFrame, type ServerFrame } from './types.js';

export class ChatController {
  readonly state = new ChatViewState();
  private socket: ChatSocket | null = null;
  private queue: string[] = [];
  private inFlight: string | null = null;

  constructor(
    private api: ApiClient,
    private socketFactory?: SocketFactory,
  ) {}

  /** POST a new session and open its stream; shows a retry banner on failure. */
  async startSession(): Promise<boolean> {
    this.state.setConnection('connecting');
    let sessionId: string;
    try {
      sessionId = await this.api.createSession();
    } catch {
      this.state.setConnection('down', 'Could not reach the story engine.');
      return false;
    }
    this.state.startSession(sessionId);
    this.openSocket(sessionId);
    return true;
  }

  private openSocket(sessionId: string): void {
    this.socket = new ChatSocket(
      this.api.wsUrl(sessionId),
      {
        onFrame: (frame) => this.handleFrame(frame),
        onStatus: (status) => {
          this.state.setConnection(
            status,
            status === 'down' ? 'Connection lost. Press retry to reconnect.' : null,
          );
        },
        onReconnect: () => void this.resync(),
      },
      this.socketFactory,
    );
    this.socket.connect();
  }

  /** Same session resumed: pull the authoritative transcript after a drop. */
  async resync(): Promise<void> {
    if (!this.state.sessionId) return;
    try {
      const turns = await this.api.fetchTranscript(this.state.sessionId);
      this.state.resetFromTranscript(turns);
    } catch {
      // transient; the next reconnect will try again
    }
  }

  retry(): void {
    if (this.state.sessionId) {
      this.socket?.close();
      this.openSocket(this.state.sessionId);
      void this.resync();
    } else {
      void this.startSession();
    }
  }

  /** Queue a message; the user bubble renders immediately when it goes out. */
  sendMessage(text: string): void {
    const trimmed = text.trim();
    if (!trimmed || !this.state.sessionId) return;
    this.queue.push(trimmed);
    this.pump();
  }

  private pump(): void {
    if (this.inFlight !== null || this.queue.length === 0 || !this.socket) return;
    const text = this.queue.shift() as string;
    this.inFlight = text;
    this.state.beginPending();
    this.state.appendMessage('user', text, this.state.nextIndex);
    this.socket.send(text);
  }

  private handleFrame(frame: ServerFrame): void {
    if (isErrorFrame(frame)) {
      // rendered inline; history stays intact
      this.state.setConnection(this.state.connection, frame.error);
      this.finishTurn();
      return;
    }
    this.state.appendMessage('system', frame.reply, frame.turn_index);
    this.finishTurn();
    void this.refreshDebug();
  }

  private finishTurn(): void {
    this.inFlight = null;
    this.state.endPending();
    this.pump();
  }

  private async refreshDebug(): Promise<void> {
    if (!this.state.sessionId) return;
    try {
      this.state.setDebug(await this.api.fetchDebug(this.state.sessionId));
    } catch {
      // debug panel is best-effort; the chat itself already advanced
    }
  }
}
