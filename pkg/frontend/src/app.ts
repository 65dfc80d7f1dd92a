// Browser wiring: one session per tab, strictly ordered message handling.

import type { ClientMessage, LogEntry, SessionStartAck } from "./protocol.js";
import { encodeClientMessage, exportClientLog, parseServerMessage } from "./protocol.js";
import { reduce } from "./state.js";
import { renderTimeline } from "./timeline.js";

class Console {
  log: LogEntry[] = [];
  ws: WebSocket | null = null;
  ack: SessionStartAck | null = null;
  timer: number | null = null;

  constructor(private root: HTMLElement) {}

  connect(address: string, mode: string) {
    const ws = new WebSocket(address);
    this.ws = ws;
    ws.onopen = () => this.send({ kind: "session_start", mode });
    ws.onmessage = (ev) => {
      const msg = parseServerMessage(String(ev.data));
      if (!msg) return;
      this.log.push({ dir: "recv", msg });
      if (msg.kind === "session_start") this.ack = msg;
      this.render();
    };
    ws.onclose = () => {
      this.banner("connection lost — transcript preserved", true);
    };
    ws.onerror = () => {
      this.banner("connection error", true);
    };
  }

  send(msg: ClientMessage) {
    if (!this.ws || this.ws.readyState !== WebSocket.OPEN) return;
    this.log.push({ dir: "sent", msg });
    this.ws.send(encodeClientMessage(msg));
  }

  tick(steps = 1) {
    this.send({ kind: "user_silence", steps });
  }

  ask(key: number[]) {
    if (!this.ack) return;
    this.send({ kind: "user_say", tokens: [this.ack.qstart, ...key] });
  }

  interrupt(key: number[]) {
    if (!this.ack) return;
    this.send({ kind: "user_interrupt", tokens: [this.ack.qstart, ...key] });
  }

  backchannel(word: number) {
    this.send({ kind: "user_backchannel", word });
  }

  exportTranscript(): string {
    return exportClientLog(this.log);
  }

  banner(text: string, error = false) {
    const el = this.root.querySelector(".status");
    if (el) {
      el.textContent = text;
      el.className = `status${error ? " error" : ""}`;
    }
  }

  render() {
    const state = reduce(this.log);
    const view = this.root.querySelector(".view");
    if (!view) return;
    view.replaceChildren(renderTimeline(state, this.root.ownerDocument));
    const speaking = state.floor === "speaking";
    for (const id of ["interrupt", "backchannel"]) {
      const btn = this.root.querySelector<HTMLButtonElement>(`#${id}`);
      if (btn) btn.disabled = !speaking;
    }
    const exportBtn = this.root.querySelector<HTMLButtonElement>("#export");
    if (exportBtn) exportBtn.disabled = state.steps === 0;
    const picker = this.root.querySelector<HTMLSelectElement>("#question");
    if (picker && this.ack && picker.options.length === 0) {
      this.ack.qa_keys.forEach((key, i) => {
        const opt = this.root.ownerDocument.createElement("option");
        opt.value = String(i);
        opt.textContent = `q${i}: [${key.join(", ")}]`;
        picker.appendChild(opt);
      });
    }
  }
}

export function mount(root: HTMLElement) {
  const app = new Console(root);
  const $ = <T extends HTMLElement>(sel: string) =>
    root.querySelector<T>(sel)!;

  $("#connect").addEventListener("click", () => {
    const addr = ($("#address") as HTMLInputElement).value;
    const mode = ($("#pace") as HTMLSelectElement).value;
    app.connect(addr, mode);
    app.banner(`connecting to ${addr} (${mode})`);
  });
  $("#ask").addEventListener("click", () => {
    const picker = $("#question") as HTMLSelectElement;
    const key = app.ack?.qa_keys[Number(picker.value)];
    if (key) app.ask(key);
  });
  $("#interrupt").addEventListener("click", () => {
    const keys = app.ack?.qa_keys ?? [];
    const key = keys[(Math.random() * keys.length) | 0];
    if (key) app.interrupt(key);
  });
  $("#backchannel").addEventListener("click", () => {
    const words = app.ack?.backchannels ?? [];
    const word = words[(Math.random() * words.length) | 0];
    if (word !== undefined) app.backchannel(word);
  });
  $("#step").addEventListener("click", () => app.tick(1));
  $("#export").addEventListener("click", () => {
    const blob = new Blob([app.exportTranscript()], {
      type: "application/jsonl",
    });
    const a = root.ownerDocument.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "session.jsonl";
    a.click();
  });
  // single-step on the keyboard for stepping around interruption onsets
  root.ownerDocument.addEventListener("keydown", (ev) => {
    if (ev.key === "n") app.tick(1);
  });
  return app;
}

declare global {
  interface Window {
    duplexConsole?: unknown;
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  const root = document.getElementById("app");
  if (root) window.duplexConsole = mount(root);
}
