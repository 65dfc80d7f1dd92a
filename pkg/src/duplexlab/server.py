"""Live duplex sessions over a newline-delimited JSON protocol.

One connection hosts one session. Every inbound event is acknowledged by at
least one outbound message; malformed input yields an error message and the
session continues. Outbound messages are serialized with sorted keys and
compact separators, so a replayed message log reproduces byte-identical
payloads.

Transports: raw TCP (line per message) and, on the same port, HTTP/WebSocket
upgrade carrying the same messages one-per-text-frame (browsers cannot open
raw TCP sockets; the message schema is identical on both transports).

See docs/protocol.md for the schema and a worked transcript.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass

from duplexlab.engine import Session, SessionClosed
from duplexlab.model import DuplexModel, ModelConfig
from duplexlab.nn import checkpoint
from duplexlab.vocab import MS_PER_STEP
from duplexlab.world import SyntheticSpec, World

PROTOCOL_VERSION = 1
MAX_LINE = 1 << 16
MAX_SAY_TOKENS = 64


@dataclass
class CheckpointEntry:
    name: str
    model: DuplexModel
    world: World
    ckpt_hash: str


class Registry:
    """Read-only mapping of checkpoint name -> loaded model + world."""

    def __init__(self):
        self.entries: dict[str, CheckpointEntry] = {}

    def add(self, name: str, model: DuplexModel, world: World,
            ckpt_hash: str = "unsaved"):
        self.entries[name] = CheckpointEntry(name, model, world, ckpt_hash)

    @classmethod
    def from_dir(cls, path: str) -> "Registry":
        reg = cls()
        for fname in sorted(os.listdir(path)):
            if not fname.endswith(".dlxw"):
                continue
            meta_path = os.path.join(path, fname[:-5] + ".meta.json")
            if not os.path.exists(meta_path):
                continue
            with open(meta_path) as fh:
                meta = json.load(fh)
            cfg = ModelConfig(variant=meta["variant"])
            if "xa_interval" in meta:
                from dataclasses import replace
                cfg = replace(cfg, xa_interval=meta["xa_interval"])
            model = DuplexModel(cfg, seed=meta["model_seed"])
            ckpt_path = os.path.join(path, fname)
            checkpoint.load_into(model.store, ckpt_path)
            world = World(SyntheticSpec(seed=meta["world_seed"]))
            reg.add(fname[:-5], model, world, checkpoint.file_hash(ckpt_path))
        if not reg.entries:
            raise FileNotFoundError(f"no checkpoint/meta pairs in {path}")
        return reg

    def default_name(self) -> str:
        return sorted(self.entries)[0]


def encode_message(msg: dict) -> str:
    return json.dumps(msg, sort_keys=True, separators=(",", ":"))


class SessionProtocol:
    """Pure message-in, messages-out session state machine (one session)."""

    def __init__(self, registry: Registry):
        self.registry = registry
        self.session: Session | None = None
        self.world: World | None = None
        self.mode = "stepped"
        self.entry: CheckpointEntry | None = None
        self.session_id: str | None = None
        self._event = None  # pending latency anchor: {"kind", "onset"}
        self._stop_step = None
        self.done = False

    # -- helpers

    def _err(self, code: str, detail: str = "") -> list[dict]:
        return [{"kind": "error", "code": code, "detail": detail[:200]}]

    def handle_line(self, line) -> list[dict]:
        if isinstance(line, bytes):
            try:
                line = line.decode("utf-8")
            except UnicodeDecodeError:
                return self._err("parse", "invalid utf-8")
        line = line.strip()
        if not line:
            return []
        if len(line) > MAX_LINE:
            return self._err("parse", "line too long")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            return self._err("parse", str(exc))
        if not isinstance(msg, dict) or "kind" not in msg:
            return self._err("parse", "message must be an object with 'kind'")
        try:
            return self._dispatch(msg)
        except SessionClosed:
            return self._err("closed", "session is closed")
        except Exception as exc:  # protocol must never crash the server
            return self._err("internal", f"{type(exc).__name__}: {exc}")

    def _dispatch(self, msg: dict) -> list[dict]:
        kind = msg.get("kind")
        if kind == "session_start":
            return self._start(msg)
        if self.session is None:
            return self._err("no_session", "send session_start first")
        if kind == "user_say":
            return self._speak(msg, event=None)
        if kind == "user_interrupt":
            return self._speak(msg, event="interrupt")
        if kind == "user_backchannel":
            return self._backchannel(msg)
        if kind == "user_silence":
            return self._silence(msg)
        if kind == "session_end":
            self.session.close()
            self.done = True
            return [{"kind": "session_end", "steps": self.session.t}]
        return self._err("unknown_kind", str(kind))

    def _start(self, msg: dict) -> list[dict]:
        if self.session is not None:
            return self._err("already_started", "one session per connection")
        name = msg.get("ckpt") or self.registry.default_name()
        entry = self.registry.entries.get(name)
        if entry is None:
            return self._err("unknown_ckpt", name)
        want = msg.get("variant")
        if want and want != entry.model.cfg.variant:
            return self._err("variant_mismatch",
                             f"{name} is {entry.model.cfg.variant}")
        mode = msg.get("mode", "stepped")
        if mode not in ("stepped", "timed"):
            return self._err("bad_mode", mode)
        self.entry = entry
        self.world = entry.world
        self.session = Session(entry.model)
        self.mode = mode
        self.session_id = hashlib.sha1(
            f"{name}:{id(self)}".encode()).hexdigest()[:12]
        qa = entry.world.qa
        return [{
            "kind": "session_start",
            "session": self.session_id,
            "ckpt": name,
            "ckpt_hash": entry.ckpt_hash,
            "variant": entry.model.cfg.variant,
            "mode": mode,
            "protocol": PROTOCOL_VERSION,
            "ms_per_step": MS_PER_STEP,
            "qa_keys": [list(k) for k in qa.heldout_keys[:16]],
            "backchannels": qa.backchannel_words,
            "qstart": entry.world.vocab.qstart,
        }]

    def _tokens_of(self, msg) -> list[int] | None:
        toks = msg.get("tokens")
        if (not isinstance(toks, list) or not toks or len(toks) > MAX_SAY_TOKENS
                or not all(isinstance(t, int) for t in toks)):
            return None
        if any(not 0 <= t < self.world.spec.text_vocab for t in toks):
            return None
        return toks

    def _speak(self, msg: dict, event: str | None) -> list[dict]:
        toks = self._tokens_of(msg)
        if toks is None:
            return self._err("bad_tokens", "tokens must be valid text ids")
        if event:
            self._event = {"kind": event, "onset": self.session.t}
            self._stop_step = None
        out = []
        units = self.world.speech_of(toks)
        for i in range(len(units) // 2):
            out.append(self._one_step(("speech", (units[2 * i], units[2 * i + 1]))))
        return out

    def _backchannel(self, msg: dict) -> list[dict]:
        word = msg.get("word")
        if not isinstance(word, int) or word not in self.world.qa.backchannel_words:
            return self._err("bad_word", "word must be a backchannel token")
        self._event = {"kind": "backchannel", "onset": self.session.t}
        self._stop_step = None
        units = self.world.speech_of([word])
        return [self._one_step(("speech", (units[0], units[1])))]

    def _silence(self, msg: dict) -> list[dict]:
        steps = msg.get("steps", 1)
        if not isinstance(steps, int) or not 1 <= steps <= 256:
            return self._err("bad_steps", "steps must be in [1,256]")
        return [self._one_step(("wait",)) for _ in range(steps)]

    def _one_step(self, entry) -> dict:
        sess = self.session
        out = sess.step(entry)
        voc = sess.model.vocab
        msg = {
            "kind": "model_step",
            "step": out.step,
            "text": out.text_token,
            "text_repr": _text_repr(voc, out.text_token),
            "audio": out.audio_group,
            "floor": out.floor,
            "transition": out.transition,
        }
        if self._event is not None:
            anchor = dict(self._event)
            int_now = (out.text_token == voc.text_int or
                       (out.audio_group or [None])[0] == voc.audio_int)
            if int_now and self._stop_step is None:
                self._stop_step = out.step
                anchor["stop_latency_ms"] = (out.step - anchor["onset"]) * MS_PER_STEP
            if (self._stop_step is not None
                    and voc.is_text_content(out.text_token)):
                anchor["respond_latency_ms"] = (out.step - anchor["onset"]) * MS_PER_STEP
                self._event = None
            msg["event"] = anchor
        return msg


def _text_repr(voc, tok: int) -> str:
    if tok == voc.text_wait:
        return "~"
    if tok == voc.text_int:
        return "INT"
    return str(tok)


# ---------------------------------------------------------------------------
# transports

class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        first = self.rfile.peek(4)[:4] if hasattr(self.rfile, "peek") else b""
        if first.startswith(b"GET"):
            self._handle_websocket()
        else:
            self._handle_lines()

    # raw newline-delimited transport
    def _handle_lines(self):
        proto = SessionProtocol(self.server.registry)
        lock = threading.Lock()
        stop_timer = self._maybe_timed(proto, lock)
        try:
            while not proto.done:
                line = self.rfile.readline(MAX_LINE + 2)
                if not line:
                    break
                with lock:
                    replies = proto.handle_line(line)
                    for msg in replies:
                        self.wfile.write((encode_message(msg) + "\n").encode())
                    self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            pass
        finally:
            stop_timer.set()

    def _maybe_timed(self, proto: SessionProtocol, lock) -> threading.Event:
        """Timed mode: auto-tick silence every MS_PER_STEP of wall time."""
        stop = threading.Event()

        def ticker():
            while not stop.wait(MS_PER_STEP / 1000.0):
                with lock:
                    if proto.session is None or proto.done or proto.mode != "timed":
                        continue
                    try:
                        msg = proto._one_step(("wait",))
                        self.wfile.write((encode_message(msg) + "\n").encode())
                        self.wfile.flush()
                    except Exception:
                        return

        threading.Thread(target=ticker, daemon=True).start()
        return stop

    # websocket transport (text frames carry the same messages)
    def _handle_websocket(self):
        request = b""
        while b"\r\n\r\n" not in request:
            chunk = self.rfile.readline()
            if not chunk:
                return
            request += chunk
        key = None
        for raw in request.split(b"\r\n"):
            if raw.lower().startswith(b"sec-websocket-key:"):
                key = raw.split(b":", 1)[1].strip()
        if key is None:
            self.wfile.write(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            return
        accept = base64.b64encode(hashlib.sha1(
            key + b"258EAFA5-E914-47DA-95CA-C5AB0DC85B11").digest())
        self.wfile.write(b"HTTP/1.1 101 Switching Protocols\r\n"
                         b"Upgrade: websocket\r\nConnection: Upgrade\r\n"
                         b"Sec-WebSocket-Accept: " + accept + b"\r\n\r\n")
        self.wfile.flush()
        proto = SessionProtocol(self.server.registry)
        lock = threading.Lock()
        stop_timer = threading.Event()

        def send(msg: dict):
            payload = encode_message(msg).encode()
            header = b"\x81"
            n = len(payload)
            if n < 126:
                header += struct.pack("B", n)
            elif n < (1 << 16):
                header += struct.pack("!BH", 126, n)
            else:
                header += struct.pack("!BQ", 127, n)
            self.wfile.write(header + payload)
            self.wfile.flush()

        def ticker():
            while not stop_timer.wait(MS_PER_STEP / 1000.0):
                with lock:
                    if proto.session is None or proto.done or proto.mode != "timed":
                        continue
                    try:
                        send(proto._one_step(("wait",)))
                    except Exception:
                        return

        threading.Thread(target=ticker, daemon=True).start()
        try:
            while not proto.done:
                frame = self._read_frame()
                if frame is None:
                    break
                opcode, payload = frame
                if opcode == 0x8:  # close
                    break
                if opcode not in (0x1, 0x2):
                    continue
                with lock:
                    for msg in proto.handle_line(payload):
                        send(msg)
        except (BrokenPipeError, ConnectionResetError):
            pass
        finally:
            stop_timer.set()

    def _read_frame(self):
        head = self.rfile.read(2)
        if len(head) < 2:
            return None
        opcode = head[0] & 0x0F
        masked = head[1] & 0x80
        length = head[1] & 0x7F
        if length == 126:
            length = struct.unpack("!H", self.rfile.read(2))[0]
        elif length == 127:
            length = struct.unpack("!Q", self.rfile.read(8))[0]
        if length > MAX_LINE:
            return None
        mask = self.rfile.read(4) if masked else b""
        payload = self.rfile.read(length)
        if masked:
            payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        return opcode, payload


class DuplexServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr, registry: Registry):
        super().__init__(addr, _Handler)
        self.registry = registry


def serve(bind: str, registry: Registry):
    host, port = bind.rsplit(":", 1)
    server = DuplexServer((host, int(port)), registry)
    try:
        server.serve_forever()
    finally:
        server.server_close()


def replay_log(log_path: str, registry: Registry) -> list[str]:
    """Re-drive a fresh session from a client message log; returns the
    encoded outbound messages, byte-identical across replays. The session id
    is the one per-connection field and is dropped from the ack."""
    proto = SessionProtocol(registry)
    out = []
    with open(log_path) as fh:
        for line in fh:
            for msg in proto.handle_line(line):
                msg.pop("session", None)
                out.append(encode_message(msg))
    return out
