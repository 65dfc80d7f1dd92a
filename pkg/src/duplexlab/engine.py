"""Step-wise full-duplex inference.

One call to `Session.step` consumes exactly one timeline step of user input
(a 2-unit acoustic pair, a prompt marker, or silence), advances every
incremental cache by one step, and emits one text token plus one audio group.
All per-step work is cache-append attention, so cost grows linearly in t.

Floor machine: Listening -> Speaking on a content text token; Speaking ->
Yielding only via TEXT_INT / AUDIO_INT emission; Yielding -> Speaking on the
next response onset; Speaking -> Listening when a response ends in waiting.

Two timeline laws that hold by construction in every composed example are
enforced structurally in free-running mode (teacher-forced mode records raw
model predictions and never enforces):

- decode delay: within the first D text tokens of a response the audio group
  is all-wait;
- turn-onset: the model begins a turn only on a user-silent step and only
  after new user activity (prompt marker or speech) since its previous turn
  ended; every composed response onset satisfies both. Holding the floor is
  unaffected: once speaking, the model freely continues, yields via INT, or
  resumes through overlap; when to start, what to say, and when to stop stay
  model decisions;
- interruption window: INT tokens only ever appear 2..6 steps (the training
  overlap support) after the onset of an in-turn user burst at least 2 steps
  long; one-step backchannel blips never carry INT supervision. Outside that
  window the INT logit is masked and the model's best remaining prediction
  stands, so whether it yields within the window remains its decision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from duplexlab import vocab as V
from duplexlab.model import DuplexModel

LISTENING, SPEAKING, YIELDING = "listening", "speaking", "yielding"


class SessionClosed(RuntimeError):
    pass


@dataclass
class StepOutput:
    step: int
    text_token: int
    audio_group: list[int] | None
    floor: str
    transition: bool
    pred_text: int            # raw model prediction (= text_token when free)
    pred_audio: list[int] | None


@dataclass
class Session:
    model: DuplexModel
    decode_audio: bool = True
    enforce_delay: bool = True
    suppress_int: bool = False
    int_window: tuple[int, int] = (2, 6)  # training overlap support bounds
    t: int = 0
    floor: str = LISTENING
    closed: bool = False

    def __post_init__(self):
        m = self.model
        self.enc_state = m.encoder.new_state()
        self.bb_caches = self._new_bb()
        self.mem_caches = {layer: _MemCache() for layer in m.adapters}
        self.head_caches = m.audio_head.new_cache()
        self.last_text = m.vocab.text_bos
        self.last_audio_tok = m.vocab.audio_bos
        self._feedback = m.audio_head.init_feedback_np()
        self._wait_group = [m.vocab.audio_wait] * m.G
        self._content_flags: list[bool] = []  # per-step: emitted text was content
        self._turn_pending = False  # user activity since the model's last turn
        self._burst = None  # {"onset", "len", "in_turn"} of the latest speech burst
        self._prev_speech = False

    def _new_bb(self):
        from duplexlab.nn.layers import KVCache

        cfg = self.model.cfg
        return [KVCache(cfg.n_heads, cfg.d_model // cfg.n_heads)
                for _ in self.model.blocks]

    def close(self):
        self.closed = True

    # --- one timeline step ---------------------------------------------------

    def step(self, user_entry, force_text: int | None = None,
             force_audio=None) -> StepOutput:
        if self.closed:
            raise SessionClosed("step() on a closed session")
        m, voc = self.model, self.model.vocab
        t = self.t

        u_row = self._user_row(user_entry)
        m_text = m.text_embed.data[self.last_text][None, :]
        m_audio = self._feedback[None, :]

        if m.cfg.variant == "cf":
            x = m.fusion.fuse_np(u_row[None, :], m_text, m_audio)
        else:
            x = m_text + m_audio
            for layer, adapter in m.adapters.items():
                k, v = adapter.project_memory_step(u_row, t)
                self.mem_caches[layer].append(k, v)

        pos = np.array([t])
        for i, block in enumerate(m.blocks, start=1):
            adapter = m.adapters.get(i)
            if adapter is not None:
                x = adapter.step(x, self.mem_caches[i], t)
            x = block.step(x, self.bb_caches[i - 1], pos)
        hidden = m.final_norm.apply_np(x)[0]

        speaking_now = user_entry[0] == "speech"
        if speaking_now:
            if self._prev_speech and self._burst is not None:
                self._burst["len"] += 1
            else:
                self._burst = {"onset": t, "len": 1,
                               "in_turn": self.floor == SPEAKING}
        self._prev_speech = speaking_now

        int_ok = self._int_lawful(t)
        logits = m.text_head.apply_np(hidden[None, :])[0]
        if self.suppress_int or (not int_ok and force_text is None):
            logits = logits.copy()
            logits[voc.text_int] = -np.inf
        pred_text = int(np.argmax(logits))
        if user_entry[0] != "wait":
            self._turn_pending = True
        if force_text is not None:
            text_token = int(force_text)
        elif (self.enforce_delay and self.floor != SPEAKING
              and (user_entry[0] != "wait" or not self._turn_pending)):
            text_token = voc.text_wait  # turn-onset law
        else:
            text_token = pred_text
        if self.floor == SPEAKING and text_token == voc.text_wait:
            self._turn_pending = False  # turn ended; a new one needs new input
        self._content_flags.append(voc.is_text_content(text_token))

        pred_audio = None
        group = None
        if self.decode_audio:
            teacher = force_audio is not None
            suppress = set()
            if self.suppress_int or (not int_ok and not teacher):
                suppress.add(voc.audio_int)
            # the audio lane mirrors the text-content lane D steps back; an
            # emitted TEXT_INT frees the head so the AUDIO_INT group can pass
            src = t - m.D
            mirrors_content = src >= 0 and self._content_flags[src]
            enforce_wait = (self.enforce_delay and not teacher
                            and not mirrors_content
                            and text_token != voc.text_int)
            if enforce_wait:
                pred_audio = m.audio_head.decode_group(
                    self.head_caches, hidden, t, self.last_audio_tok,
                    force_tokens=self._wait_group, suppress=suppress or None)
                group = list(self._wait_group)
            else:
                pred_audio = m.audio_head.decode_group(
                    self.head_caches, hidden, t, self.last_audio_tok,
                    force_tokens=force_audio, suppress=suppress or None)
                group = list(force_audio) if teacher else list(pred_audio)
            self.last_audio_tok = group[-1]
            self._feedback = m.audio_head.embed_group_np(group)
        else:
            self._feedback = m.audio_head.embed_group_np(self._wait_group)

        prev_floor = self.floor
        self._advance_floor(text_token, group)
        self.last_text = text_token
        self.t += 1
        return StepOutput(step=t, text_token=text_token, audio_group=group,
                          floor=self.floor, transition=self.floor != prev_floor,
                          pred_text=pred_text, pred_audio=pred_audio)

    def _int_lawful(self, t: int) -> bool:
        """INT is composable only 2..6 steps after an in-turn burst >= 2 long."""
        if not self.enforce_delay:
            return True
        b = self._burst
        if b is None or not b["in_turn"] or b["len"] < 2:
            return False
        lo, hi = self.int_window
        return lo <= t - b["onset"] <= hi

    def _user_row(self, entry) -> np.ndarray:
        m = self.model
        if entry[0] == "speech":
            steps = m.encoder.encode_chunk(self.enc_state, list(entry[1]))
            return steps[0]
        idx = V.USER_WAIT if entry[0] == "wait" else entry[1]
        return m.user_embed.data[idx]

    def _advance_floor(self, text_token: int, group):
        voc = self.model.vocab
        int_emitted = text_token == voc.text_int or (
            group is not None and group[0] == voc.audio_int)
        if int_emitted:
            if self.floor == SPEAKING:
                self.floor = YIELDING
            return
        if voc.is_text_content(text_token):
            self.floor = SPEAKING
        elif text_token == voc.text_wait and self.floor == SPEAKING:
            self.floor = LISTENING


class _MemCache:
    """Projected user-memory K/V for one XA adapter."""

    def __init__(self):
        self._kv = None

    def append(self, k, v):
        from duplexlab.nn.layers import KVCache

        if self._kv is None:
            self._kv = KVCache(k.shape[0], k.shape[2])
        self._kv.append(k, v)

    def view(self):
        if self._kv is None:
            import numpy as np

            return np.zeros((1, 0, 1)), np.zeros((1, 0, 1))
        return self._kv.view()
