import { describe, expect, it } from "vitest";

import type { LogEntry, ModelStep, SessionStartAck } from "../src/protocol.js";
import { exportClientLog, parseServerMessage } from "../src/protocol.js";
import { reduce } from "../src/state.js";

const ack: SessionStartAck = {
  kind: "session_start",
  session: "abc",
  ckpt: "cf",
  ckpt_hash: "h",
  variant: "cf",
  mode: "stepped",
  protocol: 1,
  ms_per_step: 160,
  qa_keys: [[3, 4]],
  backchannels: [56],
  qstart: 0,
};

function step(i: number, over: Partial<ModelStep> = {}): LogEntry {
  return {
    dir: "recv",
    msg: {
      kind: "model_step",
      step: i,
      text: 64,
      text_repr: "~",
      audio: [32, 32, 32, 32],
      floor: "listening",
      transition: false,
      ...over,
    },
  };
}

describe("reduce", () => {
  it("keeps lanes step-aligned and consumes sent speech in order", () => {
    const log: LogEntry[] = [
      { dir: "recv", msg: ack },
      { dir: "sent", msg: { kind: "user_say", tokens: [0, 3, 4] } },
      step(0),
      step(1),
      step(2),
      { dir: "sent", msg: { kind: "user_silence", steps: 2 } },
      step(3),
      step(4, { text: 9, text_repr: "9", floor: "speaking", transition: true }),
    ];
    const st = reduce(log);
    expect(st.userLane.length).toBe(5);
    expect(st.textLane.length).toBe(5);
    expect(st.audioLane.length).toBe(5);
    expect(st.userLane.slice(0, 3).map((c) => c.label)).toEqual(["0", "3", "4"]);
    expect(st.userLane[3].label).toBe("·");
    expect(st.textLane[4].cls).toBe("content");
    expect(st.floor).toBe("speaking");
    expect(st.steps).toBe(5);
  });

  it("is a pure function of the log", () => {
    const log: LogEntry[] = [
      { dir: "recv", msg: ack },
      step(0),
      step(1, { text: 65, text_repr: "INT", floor: "yielding", transition: true,
                event: { kind: "interrupt", onset: 0, stop_latency_ms: 160 } }),
    ];
    expect(reduce(log)).toEqual(reduce(log));
  });

  it("captures latency readouts from event payloads", () => {
    const log: LogEntry[] = [
      { dir: "recv", msg: ack },
      step(0, { event: { kind: "interrupt", onset: 0 } }),
      step(1, { text: 65, text_repr: "INT", floor: "yielding",
                event: { kind: "interrupt", onset: 0, stop_latency_ms: 160 } }),
      step(2, { text: 7, text_repr: "7", floor: "speaking",
                event: { kind: "interrupt", onset: 0, stop_latency_ms: 160,
                         respond_latency_ms: 320 } }),
    ];
    const st = reduce(log);
    expect(st.stopLatencyMs).toBe(160);
    expect(st.respondLatencyMs).toBe(320);
    expect(st.lastEventKind).toBe("interrupt");
  });

  it("records errors without derailing the lanes", () => {
    const log: LogEntry[] = [
      { dir: "recv", msg: ack },
      { dir: "recv", msg: { kind: "error", code: "parse", detail: "x" } },
      step(0),
    ];
    const st = reduce(log);
    expect(st.errors).toEqual(["parse: x"]);
    expect(st.textLane.length).toBe(1);
  });
});

describe("protocol helpers", () => {
  it("parses valid server lines and rejects junk", () => {
    expect(parseServerMessage('{"kind":"session_end","steps":3}')).toEqual({
      kind: "session_end",
      steps: 3,
    });
    expect(parseServerMessage("{nope")).toBeNull();
    expect(parseServerMessage("42")).toBeNull();
  });

  it("exports only client messages, one JSON per line", () => {
    const log: LogEntry[] = [
      { dir: "sent", msg: { kind: "session_start", ckpt: "cf" } },
      { dir: "recv", msg: ack },
      { dir: "sent", msg: { kind: "user_silence", steps: 1 } },
      step(0),
    ];
    const lines = exportClientLog(log).trim().split("\n");
    expect(lines).toHaveLength(2);
    expect(JSON.parse(lines[0]).kind).toBe("session_start");
    expect(JSON.parse(lines[1]).kind).toBe("user_silence");
  });
});
