// @vitest-environment node
// End-to-end: a scripted session against the real server process and a
// trained checkpoint. Triggers one interruption and one backchannel, then
// asserts the rendered floor banner and latency readouts agree with the
// underlying wire log.

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { once } from "node:events";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

import { JSDOM } from "jsdom";
import { WebSocket } from "ws";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import type { LogEntry, ModelStep, ServerMessage, SessionStartAck } from "../src/protocol.js";
import { parseServerMessage } from "../src/protocol.js";
import { reduce } from "../src/state.js";
import { renderTimeline } from "../src/timeline.js";

const ROOT = path.resolve(path.dirname(fileURLToPath(import.meta.url)), "..", "..");
const PORT = 7944;

let server: ChildProcess | null = null;
let ws: WebSocket;
const log: LogEntry[] = [];
let ack: SessionStartAck;

function send(msg: object) {
  log.push({ dir: "sent", msg: msg as LogEntry["msg"] });
  ws.send(JSON.stringify(msg));
}

const inbox: ServerMessage[] = [];
let waiter: (() => void) | null = null;

function onMessage(data: unknown) {
  const msg = parseServerMessage(String(data));
  if (!msg) return;
  log.push({ dir: "recv", msg });
  inbox.push(msg);
  waiter?.();
}

async function nextMessage(timeoutMs = 20_000): Promise<ServerMessage> {
  const t0 = Date.now();
  while (inbox.length === 0) {
    if (Date.now() - t0 > timeoutMs) throw new Error("timed out waiting for server");
    await new Promise<void>((resolve) => {
      waiter = resolve;
      setTimeout(resolve, 50);
    });
    waiter = null;
  }
  return inbox.shift()!;
}

async function drain(n: number): Promise<ModelStep[]> {
  const out: ModelStep[] = [];
  for (let i = 0; i < n; i++) {
    const msg = await nextMessage();
    if (msg.kind !== "model_step") throw new Error(`unexpected ${msg.kind}`);
    out.push(msg);
  }
  return out;
}

async function tickUntil(pred: (s: ModelStep) => boolean, max = 30): Promise<ModelStep> {
  for (let i = 0; i < max; i++) {
    send({ kind: "user_silence", steps: 1 });
    const [step] = await drain(1);
    if (pred(step)) return step;
  }
  throw new Error("condition not reached");
}

beforeAll(async () => {
  // reference checkpoint: built by the primary acceptance suite (cached);
  // trains it on a completely fresh checkout
  const ckpt = execFileSync(
    "python3",
    ["-c",
     "import sys; sys.path.insert(0, 'tests'); " +
     "from acceptance_artifacts import build_artifacts; " +
     "print(build_artifacts()['cf'])"],
    { cwd: ROOT, encoding: "utf-8", timeout: 1_700_000 },
  ).trim();
  const ckptDir = path.dirname(ckpt);
  server = spawn("python3",
                 ["-m", "duplexlab.cli", "serve", "--ckpt-dir", ckptDir,
                  "--bind", `127.0.0.1:${PORT}`],
                 { cwd: ROOT, stdio: ["ignore", "pipe", "pipe"] });
  await once(server.stdout!, "data"); // "serving ..." banner
  ws = new WebSocket(`ws://127.0.0.1:${PORT}`);
  ws.on("message", onMessage);
  await once(ws, "open");
}, 1_800_000);

afterAll(() => {
  ws?.close();
  server?.kill();
});

describe("console end-to-end against a live stepped session", () => {
  it("runs an interruption and a backchannel with matching readouts", async () => {
    send({ kind: "session_start", ckpt: "stage3", mode: "stepped" });
    const first = await nextMessage();
    expect(first.kind).toBe("session_start");
    ack = first as SessionStartAck;
    expect(ack.variant).toBe("cf");
    expect(ack.ms_per_step).toBe(160);

    // ask a question, wait for the response onset (floor -> speaking)
    send({ kind: "user_say", tokens: [ack.qstart, ...ack.qa_keys[0]] });
    await drain(3);
    await tickUntil((s) => s.floor === "speaking");

    // barge in mid-response with another question
    send({ kind: "user_interrupt", tokens: [ack.qstart, ...ack.qa_keys[1]] });
    const overlap = await drain(3);
    const onset = overlap[0].step;
    let intStep: ModelStep | null = null;
    for (const s of overlap) {
      if (s.text_repr === "INT") intStep = s;
    }
    if (!intStep) {
      intStep = await tickUntil((s) => s.text_repr === "INT", 10);
    }
    expect(intStep.floor).toBe("yielding");
    const wantStopMs = (intStep.step - onset) * 160;
    expect(intStep.event?.stop_latency_ms).toBe(wantStopMs);

    // model answers the interrupting question (floor -> speaking again)
    const respond = await tickUntil((s) => s.floor === "speaking");
    expect(respond.event?.respond_latency_ms).toBe((respond.step - onset) * 160);

    // DOM: banner and latency readouts reflect the wire log exactly
    const dom = new JSDOM("<!doctype html><html><body></body></html>");
    let el = renderTimeline(reduce(log), dom.window.document);
    expect(el.querySelector(".floor-banner")!.getAttribute("data-floor"))
      .toBe("speaking");
    expect(el.querySelector(".latency")!.getAttribute("data-stop-ms"))
      .toBe(String(wantStopMs));
    expect(el.querySelector(".latency")!.getAttribute("data-respond-ms"))
      .toBe(String((respond.step - onset) * 160));

    // let the reply finish, ask a fresh question, then backchannel into it
    await tickUntil((s) => s.floor === "listening", 20);
    send({ kind: "user_say", tokens: [ack.qstart, ...ack.qa_keys[2]] });
    await drain(3);
    await tickUntil((s) => s.floor === "speaking");
    send({ kind: "user_backchannel", word: ack.backchannels[0] });
    const bc = await drain(1);
    const after = [...bc];
    for (let i = 0; i < 4; i++) {
      send({ kind: "user_silence", steps: 1 });
      after.push(...(await drain(1)));
    }
    // resume: the model keeps the floor and never yields through the region
    for (const s of after) {
      expect(s.text_repr).not.toBe("INT");
      expect(s.floor).toBe("speaking");
    }

    // final render sanity: lanes stayed step-aligned over the whole session
    const state = reduce(log);
    el = renderTimeline(state, dom.window.document);
    const rows = el.querySelectorAll("tr.lane");
    expect(rows).toHaveLength(3);
    expect(state.userLane.length).toBe(state.textLane.length);
    expect(state.textLane.length).toBe(state.audioLane.length);
    expect(state.steps).toBe(state.textLane.length);

    send({ kind: "session_end" });
    const end = await nextMessage();
    expect(end.kind).toBe("session_end");
  }, 120_000);
});
