// Pure session-view reducer: the rendered timeline is a function of the
// ordered message log and nothing else (no hidden client-side inference).

import type {
  ClientMessage,
  Floor,
  LogEntry,
  ModelStep,
  ServerMessage,
  SessionStartAck,
} from "./protocol.js";

export interface Cell {
  label: string;
  cls: string; // wait | content | int | speech | prompt
}

export interface ViewState {
  ack: SessionStartAck | null;
  userLane: Cell[];
  textLane: Cell[];
  audioLane: Cell[];
  floor: Floor;
  steps: number;
  stopLatencyMs: number | null;
  respondLatencyMs: number | null;
  lastEventKind: string | null;
  errors: string[];
  ended: boolean;
}

function initial(): ViewState {
  return {
    ack: null,
    userLane: [],
    textLane: [],
    audioLane: [],
    floor: "listening",
    steps: 0,
    stopLatencyMs: null,
    respondLatencyMs: null,
    lastEventKind: null,
    errors: [],
    ended: false,
  };
}

const SILENCE: Cell = { label: "·", cls: "wait" };

function textCell(step: ModelStep): Cell {
  if (step.text_repr === "~") return { label: "·", cls: "wait" };
  if (step.text_repr === "INT") return { label: "INT", cls: "int" };
  return { label: step.text_repr, cls: "content" };
}

function audioCell(step: ModelStep): Cell {
  if (step.audio === null) return { label: "-", cls: "wait" };
  const ack = step.audio;
  if (ack.every((t) => t === ack[0]) && step.text_repr === "INT")
    return { label: "INT", cls: "int" };
  // wait groups are uniform and use the reserved wait id announced length-wise
  return { label: ack.join(","), cls: "audio" };
}

export function reduce(log: LogEntry[]): ViewState {
  const st = initial();
  // user cells queued by the client's own speech messages; each model_step
  // consumes one (the server advances one step per spoken token)
  const pending: Cell[] = [];
  for (const entry of log) {
    if (entry.dir === "sent") {
      const msg = entry.msg as ClientMessage;
      if (msg.kind === "user_say" || msg.kind === "user_interrupt") {
        const cls = msg.kind === "user_interrupt" ? "interrupt" : "speech";
        for (const tok of msg.tokens) pending.push({ label: String(tok), cls });
      } else if (msg.kind === "user_backchannel") {
        pending.push({ label: `bc:${msg.word}`, cls: "backchannel" });
      }
      continue;
    }
    const msg = entry.msg as ServerMessage;
    if (msg.kind === "session_start") {
      st.ack = msg;
    } else if (msg.kind === "error") {
      st.errors.push(`${msg.code}: ${msg.detail}`);
    } else if (msg.kind === "session_end") {
      st.ended = true;
    } else if (msg.kind === "model_step") {
      st.userLane.push(pending.length ? pending.shift()! : SILENCE);
      st.textLane.push(textCell(msg));
      st.audioLane.push(audioCell(msg));
      st.floor = msg.floor;
      st.steps = msg.step + 1;
      if (msg.event) {
        st.lastEventKind = msg.event.kind;
        if (msg.event.stop_latency_ms !== undefined)
          st.stopLatencyMs = msg.event.stop_latency_ms;
        if (msg.event.respond_latency_ms !== undefined)
          st.respondLatencyMs = msg.event.respond_latency_ms;
      }
    }
  }
  return st;
}
