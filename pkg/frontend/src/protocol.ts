// Wire types for the duplexlab session protocol (docs/protocol.md).
// The console speaks the protocol verbatim over a WebSocket transport.

export type Floor = "listening" | "speaking" | "yielding";

export interface EventAnchor {
  kind: string;
  onset: number;
  stop_latency_ms?: number;
  respond_latency_ms?: number;
}

export interface ModelStep {
  kind: "model_step";
  step: number;
  text: number;
  text_repr: string;
  audio: number[] | null;
  floor: Floor;
  transition: boolean;
  event?: EventAnchor;
}

export interface SessionStartAck {
  kind: "session_start";
  session: string;
  ckpt: string;
  ckpt_hash: string;
  variant: string;
  mode: string;
  protocol: number;
  ms_per_step: number;
  qa_keys: number[][];
  backchannels: number[];
  qstart: number;
}

export interface ErrorMessage {
  kind: "error";
  code: string;
  detail: string;
}

export interface SessionEnd {
  kind: "session_end";
  steps: number;
}

export type ServerMessage = ModelStep | SessionStartAck | ErrorMessage | SessionEnd;

export type ClientMessage =
  | { kind: "session_start"; ckpt?: string; variant?: string; mode?: string }
  | { kind: "user_say"; tokens: number[] }
  | { kind: "user_interrupt"; tokens: number[] }
  | { kind: "user_backchannel"; word: number }
  | { kind: "user_silence"; steps?: number }
  | { kind: "session_end" };

export function parseServerMessage(line: string): ServerMessage | null {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null || !("kind" in obj)) return null;
  return obj as ServerMessage;
}

export function encodeClientMessage(msg: ClientMessage): string {
  return JSON.stringify(msg);
}

// One session log entry: everything sent and received, in order.
export interface LogEntry {
  dir: "sent" | "recv";
  msg: ClientMessage | ServerMessage;
}

// The export format is the client-side wire log, replayable by the server's
// replay tool (one JSON message per line).
export function exportClientLog(log: LogEntry[]): string {
  return (
    log
      .filter((e) => e.dir === "sent")
      .map((e) => JSON.stringify(e.msg))
      .join("\n") + "\n"
  );
}
