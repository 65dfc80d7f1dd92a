import { describe, expect, it } from "vitest";

import type { LogEntry, SessionStartAck } from "../src/protocol.js";
import { reduce } from "../src/state.js";
import { renderTimeline } from "../src/timeline.js";

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

const log: LogEntry[] = [
  { dir: "recv", msg: ack },
  { dir: "sent", msg: { kind: "user_say", tokens: [0, 3] } },
  {
    dir: "recv",
    msg: { kind: "model_step", step: 0, text: 64, text_repr: "~",
           audio: [32, 32, 32, 32], floor: "listening", transition: false },
  },
  {
    dir: "recv",
    msg: { kind: "model_step", step: 1, text: 65, text_repr: "INT",
           audio: [33, 33, 33, 33], floor: "yielding", transition: true,
           event: { kind: "interrupt", onset: 0, stop_latency_ms: 160 } },
  },
];

describe("renderTimeline", () => {
  it("same log renders the same DOM (snapshot equality)", () => {
    const a = renderTimeline(reduce(log), document).outerHTML;
    const b = renderTimeline(reduce(log), document).outerHTML;
    expect(a).toBe(b);
    expect(a).toMatchSnapshot();
  });

  it("shows the floor banner and latency readouts", () => {
    const el = renderTimeline(reduce(log), document);
    const banner = el.querySelector(".floor-banner")!;
    expect(banner.getAttribute("data-floor")).toBe("yielding");
    expect(banner.textContent).toContain("yielding");
    const latency = el.querySelector(".latency")!;
    expect(latency.getAttribute("data-stop-ms")).toBe("160");
    expect(latency.textContent).toContain("160 ms");
  });

  it("renders three step-aligned lanes", () => {
    const el = renderTimeline(reduce(log), document);
    const rows = el.querySelectorAll("tr.lane");
    expect(rows).toHaveLength(3);
    for (const row of rows) {
      expect(row.querySelectorAll("td.cell")).toHaveLength(2);
    }
    expect(el.querySelector(".lane-text td.int")).not.toBeNull();
  });
});
