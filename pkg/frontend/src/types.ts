// Wire types for the chat service API.

export type Speaker = 'user' | 'system';

export interface TranscriptTurn {
  index: number;
  speaker: Speaker;
  text: string;
}

export interface DebugCandidate {
  source: 'topic' | 'context' | 'poetry';
  text: string;
  certainty: number;
  q: number;
  boost: number;
  total: number;
  chosen: boolean;
}

export interface ReplyFrame {
  reply: string;
  turn_index: number;
}

export interface ErrorFrame {
  error: string;
}

export type ServerFrame = ReplyFrame | ErrorFrame;

export function isErrorFrame(frame: ServerFrame): frame is ErrorFrame {
  return typeof (frame as ErrorFrame).error === 'string';
}

export type ConnectionStatus = 'connecting' | 'open' | 'reconnecting' | 'down';
