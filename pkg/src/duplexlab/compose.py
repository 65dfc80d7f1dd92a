"""Timeline composition: builds aligned three-stream training records.

Every example lives on a shared duplex timeline. Per step the user stream
holds one entry (prompt marker, 2-unit acoustic pair, or silence), the model
text stream one token, and the model audio stream one G-token group. The
audio stream trails the text stream by the decode delay D: the group for the
text token emitted at step s appears at step s + D, and the first D group
positions of every spoken response are all-wait groups.

Interruption supervision: after a user interruption at onset step O the model
streams continue the original response for the sampled overlap d, emit
TEXT_INT / an AUDIO_INT group at O + d, then answer the interrupting query
(with its own delay-D audio onset). With interrupt-token supervision off the
INT step is replaced by plain waiting so the streams switch over immediately.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from duplexlab import vocab as V
from duplexlab.world import ANSWER_LEN, QUERY_LEN, RESPONSE_LEN, EpisodePlan, World


class ComposeError(ValueError):
    pass


class PlanRejected(ComposeError):
    """Raised when a plan's insertion constraints cannot be satisfied."""


@dataclass
class ComposerConfig:
    overlap_support: tuple[int, ...] = (2, 3, 4, 5, 6)
    overlap_probs: tuple[float, ...] = (0.6, 0.3, 0.06, 0.03, 0.01)
    int_supervision: bool = True
    w_wait: float = 0.001
    w_int: float = 50.0
    w_content: float = 1.0
    delay: int = 2
    tail_steps: int = 3  # supervised finished-responding waits at example end
    lead_steps: int = 0  # optional silent lead before single-turn prompts

    def __post_init__(self):
        if len(self.overlap_support) != len(self.overlap_probs):
            raise ComposeError("overlap support/probs length mismatch")
        if abs(sum(self.overlap_probs) - 1.0) > 1e-9:
            raise ComposeError("overlap probabilities must sum to 1")
        if min(self.w_wait, self.w_int, self.w_content) <= 0:
            raise ComposeError("loss weights must be positive")


# user entries: ("prompt", marker) | ("wait",) | ("speech", (u1, u2))
UserEntry = tuple


@dataclass
class DuplexExample:
    kind: str
    user: list[UserEntry]
    text: np.ndarray                 # (T,) target token ids
    text_w: np.ndarray               # (T,) loss weights
    audio: np.ndarray | None         # (T, G) target ids, None for ASR/S2TD
    audio_w: np.ndarray | None       # (T, G)
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.user)

    def validate(self, world: World, cfg: ComposerConfig):
        voc = world.vocab
        T = self.steps
        if self.text.shape != (T,) or self.text_w.shape != (T,):
            raise ComposeError("text stream length mismatch")
        if self.audio is not None:
            if self.audio.shape != (T, world.G):
                raise ComposeError("audio stream length mismatch")
            for t in range(T):
                row = self.audio[t]
                is_wait = np.all(row == voc.audio_wait)
                is_int = np.all(row == voc.audio_int)
                if not (is_wait or is_int) and np.any(row >= voc.audio_size):
                    raise ComposeError(f"mixed audio group at step {t}")
        resp = self.meta.get("response_start")
        if resp is not None and self.audio is not None:
            for t in range(resp, min(resp + cfg.delay, T)):
                if not np.all(self.audio[t] == voc.audio_wait):
                    raise ComposeError("delay law violated at response onset")


def sample_overlap(cfg: ComposerConfig, rng: np.random.Generator) -> int:
    idx = rng.choice(len(cfg.overlap_support), p=np.asarray(cfg.overlap_probs))
    return int(cfg.overlap_support[idx])


class Composer:
    def __init__(self, world: World, cfg: ComposerConfig | None = None):
        self.world = world
        self.cfg = cfg or ComposerConfig()
        self.voc = world.vocab
        self.G = world.G

    # --- small builders -----------------------------------------------------

    def _speech_entries(self, tokens) -> list[UserEntry]:
        units = self.world.speech_of(tokens)
        return [("speech", (units[2 * i], units[2 * i + 1]))
                for i in range(len(units) // V.UNITS_PER_STEP)]

    def _empty_audio(self, T: int):
        audio = np.full((T, self.G), self.voc.audio_wait, dtype=np.int64)
        audio_w = np.full((T, self.G), self.cfg.w_wait)
        return audio, audio_w

    def _place_audio(self, audio, audio_w, start: int, tokens, stop: int | None = None):
        """Content groups for `tokens` at steps start.. (clipped to stop)."""
        groups = self.world.audio_tokens_of(tokens)
        for i, grp in enumerate(groups):
            s = start + i
            if stop is not None and s >= stop:
                break
            audio[s] = grp
            audio_w[s] = self.cfg.w_content

    # --- single-turn tasks ----------------------------------------------------

    def compose_asr(self, utterance) -> DuplexExample:
        if not utterance:
            raise ComposeError("empty utterance")
        n, lead = len(utterance), self.cfg.lead_steps
        user = [("wait",)] * lead + [("prompt", V.PROMPT_ASR)]
        user += self._speech_entries(utterance)
        user += [("wait",)] * (n + self.cfg.tail_steps)
        T = lead + 1 + 2 * n + self.cfg.tail_steps
        start = lead + 1 + n
        text = np.full(T, self.voc.text_wait, dtype=np.int64)
        text_w = np.full(T, self.cfg.w_wait)
        text[start:start + n] = utterance
        text_w[start:start + n] = self.cfg.w_content
        return DuplexExample("asr", user, text, text_w, None, None,
                             meta={"transcript_start": start,
                                   "speech_end": lead + n,
                                   "tokens": list(utterance)})

    def compose_tts(self, tokens) -> DuplexExample:
        if not tokens:
            raise ComposeError("empty text")
        n, D, lead = len(tokens), self.cfg.delay, self.cfg.lead_steps
        T = lead + 1 + n + D + self.cfg.tail_steps
        user = ([("wait",)] * lead + [("prompt", V.PROMPT_TTS)]
                + [("wait",)] * (T - lead - 1))
        text = np.full(T, self.voc.text_wait, dtype=np.int64)
        text_w = np.full(T, self.cfg.w_wait)
        r = lead + 1
        text[r:r + n] = tokens
        text_w[r:r + n] = self.cfg.w_content
        audio, audio_w = self._empty_audio(T)
        self._place_audio(audio, audio_w, r + D, tokens)
        return DuplexExample("tts", user, text, text_w, audio, audio_w,
                             meta={"response_start": r, "tokens": list(tokens)})

    def _compose_qa(self, key, with_audio: bool) -> DuplexExample:
        # the spoken response is the full fixed-length form everywhere
        # (answer + elaboration); uniform response length keeps the
        # stop-speaking boundary unambiguous across tasks
        q = self.world.qa.question_tokens(key)
        response = self.world.qa.response_of(key)
        D, lead = self.cfg.delay, self.cfg.lead_steps
        R = lead + 1 + QUERY_LEN              # response text onset
        T = R + RESPONSE_LEN + D + self.cfg.tail_steps
        user = [("wait",)] * lead + [("prompt", V.PROMPT_DIALOG)]
        user += self._speech_entries(q)
        user += [("wait",)] * (RESPONSE_LEN + D + self.cfg.tail_steps)
        text = np.full(T, self.voc.text_wait, dtype=np.int64)
        text_w = np.full(T, self.cfg.w_wait)
        text[R:R + RESPONSE_LEN] = response
        text_w[R:R + RESPONSE_LEN] = self.cfg.w_content
        audio = audio_w = None
        if with_audio:
            audio, audio_w = self._empty_audio(T)
            self._place_audio(audio, audio_w, R + D, response)
        kind = "s2tsd" if with_audio else "s2td"
        return DuplexExample(kind, user, text, text_w, audio, audio_w,
                             meta={"response_start": R,
                                   "answer": response[:ANSWER_LEN],
                                   "response_tokens": response,
                                   "speech_end": lead + QUERY_LEN,
                                   "query_key": tuple(key)})

    def compose_s2tsd(self, key) -> DuplexExample:
        return self._compose_qa(key, with_audio=True)

    def compose_s2td(self, key) -> DuplexExample:
        return self._compose_qa(key, with_audio=False)

    # --- full-duplex episodes -------------------------------------------------

    def compose_duplex(self, plan: EpisodePlan, rng: np.random.Generator) -> DuplexExample:
        world, voc, cfg, D = self.world, self.voc, self.cfg, self.cfg.delay
        q = world.qa.question_tokens(plan.base_key)
        response = world.qa.response_of(plan.base_key)
        L = plan.lead_silence
        R = L + QUERY_LEN                       # base response text onset
        meta = {"kind": plan.kind, "lead": L, "query_end": R - 1,
                "response_start": R, "response_tokens": response,
                "base_key": plan.base_key}

        if plan.kind in ("plain", "smooth", "backchannel"):
            T = R + RESPONSE_LEN + D
            user = [("wait",)] * L + self._speech_entries(q)
            user += [("wait",)] * (T - R)
            text = np.full(T, voc.text_wait, dtype=np.int64)
            text_w = np.full(T, cfg.w_wait)
            text[R:R + RESPONSE_LEN] = response
            text_w[R:R + RESPONSE_LEN] = cfg.w_content
            audio, audio_w = self._empty_audio(T)
            self._place_audio(audio, audio_w, R + D, response)
            if plan.kind == "backchannel":
                lo, hi = R + 2, R + RESPONSE_LEN - 3
                b = int(rng.integers(lo, hi + 1))
                word = plan.backchannel_word
                units = world.speech_of([word])
                user[b] = ("speech", (units[0], units[1]))
                meta["backchannel_step"] = b
            return DuplexExample(plan.kind, user, text, text_w, audio, audio_w, meta)

        if plan.kind not in ("interrupt_dep", "interrupt_indep"):
            raise ComposeError(f"unknown plan kind {plan.kind}")

        d = sample_overlap(cfg, rng)
        lo = R + 1
        if plan.kind == "interrupt_dep":
            # interruption may begin only after the trigger token was spoken
            trigger_spoken = R + plan.trigger_index + D
            lo = max(lo, trigger_spoken + 1)
        hi = R + RESPONSE_LEN - d
        if lo > hi:
            raise PlanRejected(
                f"no onset satisfies trigger/overlap constraints (d={d}, window [{lo},{hi}])")
        O = int(rng.integers(lo, hi + 1))
        I = O + d                                # INT step
        R2 = max(I, O + QUERY_LEN - 1) + 1       # reply onset after INT and query end
        iq = world.qa.question_tokens(plan.interrupt_key)
        ireply = world.qa.response_of(plan.interrupt_key)
        T = R2 + RESPONSE_LEN + D

        user: list[UserEntry] = [("wait",)] * T
        for i, e in enumerate(self._speech_entries(q)):
            user[L + i] = e
        for i, e in enumerate(self._speech_entries(iq)):
            user[O + i] = e

        text = np.full(T, voc.text_wait, dtype=np.int64)
        text_w = np.full(T, cfg.w_wait)
        text[R:I] = response[:I - R]
        text_w[R:I] = cfg.w_content
        audio, audio_w = self._empty_audio(T)
        self._place_audio(audio, audio_w, R + D, response, stop=I)
        if cfg.int_supervision:
            text[I] = voc.text_int
            text_w[I] = cfg.w_int
            audio[I] = voc.audio_int
            audio_w[I] = cfg.w_int
        text[R2:R2 + RESPONSE_LEN] = ireply
        text_w[R2:R2 + RESPONSE_LEN] = cfg.w_content
        self._place_audio(audio, audio_w, R2 + D, ireply)

        meta.update(onset=O, overlap=d, int_step=I, reply_start=R2,
                    interrupt_key=tuple(plan.interrupt_key),
                    interrupt_answer=ireply[:ANSWER_LEN],
                    interrupt_query_end=O + QUERY_LEN - 1)
        return DuplexExample(plan.kind, user, text, text_w, audio, audio_w, meta)

    def compose(self, kind: str, payload, rng: np.random.Generator) -> DuplexExample:
        if kind == "asr":
            return self.compose_asr(payload)
        if kind == "tts":
            return self.compose_tts(payload)
        if kind == "s2td":
            return self.compose_s2td(payload)
        if kind == "s2tsd":
            return self.compose_s2tsd(payload)
        if kind == "duplex":
            return self.compose_duplex(payload, rng)
        raise ComposeError(f"unknown record kind {kind}")


def align_streams(text_len: int, audio_group_len: int, g: int, d: int) -> tuple[int, int]:
    """End-padding rule: both streams padded to max(text, audio + delay)."""
    if text_len < 0 or audio_group_len < 0:
        raise ComposeError("negative stream length")
    if audio_group_len == 0:
        return text_len, 0
    total = max(text_len, audio_group_len + d)
    return total, total


def render_example(ex: DuplexExample, world: World) -> str:
    """Human-readable dump: one column per timeline step (debugging/goldens)."""
    voc = world.vocab

    def user_cell(entry):
        if entry[0] == "wait":
            return "·"
        if entry[0] == "prompt":
            return f"P{entry[1]}"
        return f"{entry[1][0]:x}{entry[1][1]:x}"

    def text_cell(tok):
        if tok == voc.text_wait:
            return "·"
        if tok == voc.text_int:
            return "INT"
        return str(tok)

    def audio_cell(row):
        if row is None:
            return "-"
        if np.all(row == voc.audio_wait):
            return "·"
        if np.all(row == voc.audio_int):
            return "INT"
        return "g" + "".join(f"{x:02d}" for x in row)

    cols = []
    for t in range(ex.steps):
        cols.append((user_cell(ex.user[t]), text_cell(int(ex.text[t])),
                     audio_cell(ex.audio[t] if ex.audio is not None else None)))
    widths = [max(len(c[i]) for c in cols) for i in range(3)]
    lanes = ["user  | ", "text  | ", "audio | "]
    for c in cols:
        for i in range(3):
            lanes[i] += c[i].rjust(widths[i]) + " "
    header = f"[{ex.kind}] steps={ex.steps}\n"
    return header + "\n".join(lane.rstrip() for lane in lanes) + "\n"
