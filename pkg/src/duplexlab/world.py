"""Seeded toy speech universe.

Stands in for real corpora: deterministic text-to-acoustic and text-to-audio
expansions, a generalizable question-answering rule, backchannel words,
trigger-driven follow-up questions, and corpus generation/persistence.

The QA rule is position-wise: for a question key (k1, k2),
answer = [P1[k1], P2[k2], P3[k1], P4[k2]] with seeded permutations P_i over
the QA pool, and the longer spoken response appends six more mapped tokens.
A model can therefore answer held-out keys after learning the per-position
mappings from the training keys.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from duplexlab.vocab import Vocab

ANSWER_LEN = 4
RESPONSE_LEN = 10  # answer + 6 elaboration tokens (duplex spoken responses)
QUERY_LEN = 3      # QSTART k1 k2

EPISODE_KINDS = ("plain", "smooth", "interrupt_dep", "interrupt_indep", "backchannel")


class WorldError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int
    text_vocab: int = 64
    audio_vocab: int = 32
    acoustic_units: int = 16
    group_size: int = 4
    n_train_keys: int = 600
    n_heldout_keys: int = 40

    def __post_init__(self):
        if min(self.text_vocab, self.audio_vocab, self.acoustic_units) < 2:
            raise WorldError("all vocabulary sizes must be >= 2")


@dataclass
class EpisodePlan:
    kind: str
    base_key: tuple[int, int]
    lead_silence: int
    interrupt_key: tuple[int, int] | None = None
    trigger_index: int | None = None     # position of trigger token in the response
    backchannel_word: int | None = None


class QaTable:
    """Deterministic QA mapping plus interruption/backchannel word tables."""

    def __init__(self, vocab: Vocab, rng: np.random.Generator,
                 n_train: int, n_heldout: int):
        self.vocab = vocab
        self.pool = np.array(list(vocab.qa_pool), dtype=np.int64)
        npool = len(self.pool)
        self._index = {int(t): i for i, t in enumerate(self.pool)}
        # one permutation per answer position
        self._perms = [self.pool[rng.permutation(npool)] for _ in range(ANSWER_LEN)]
        # trigger token -> follow-up question key
        self._follow = [self.pool[rng.permutation(npool)] for _ in range(2)]
        all_keys = [(int(a), int(b)) for a in self.pool for b in self.pool]
        order = rng.permutation(len(all_keys))
        picked = [all_keys[i] for i in order[:n_train + n_heldout]]
        self.heldout_keys = picked[:n_heldout]
        self.train_keys = picked[n_heldout:]
        self.backchannel_words = [int(w) for w in vocab.backchannels]

    def _lookup(self, perm: np.ndarray, token: int) -> int:
        try:
            return int(perm[self._index[token]])
        except KeyError:
            raise WorldError(f"token {token} outside QA pool") from None

    def answer_of(self, key: tuple[int, int]) -> list[int]:
        k1, k2 = key
        return [self._lookup(self._perms[i], k1 if i % 2 == 0 else k2)
                for i in range(ANSWER_LEN)]

    def response_of(self, key: tuple[int, int]) -> list[int]:
        """Long spoken response: the answer followed by recombinations of the
        same per-position tables (swapped and doubled keys), so the spoken
        elaboration reuses mappings the answer task already teaches."""
        k1, k2 = key
        resp = self.answer_of(key)
        resp += self.answer_of((k2, k1))
        resp += self.answer_of((k1, k1))[:RESPONSE_LEN - 2 * ANSWER_LEN]
        return resp

    def followup_of(self, trigger: int) -> tuple[int, int]:
        return (self._lookup(self._follow[0], trigger),
                self._lookup(self._follow[1], trigger))

    def question_tokens(self, key: tuple[int, int]) -> list[int]:
        return [self.vocab.qstart, key[0], key[1]]


class World:
    def __init__(self, spec: SyntheticSpec):
        self.spec = spec
        self.vocab = Vocab(spec.text_vocab, spec.audio_vocab, spec.acoustic_units)
        self.G = spec.group_size
        rng = np.random.default_rng(spec.seed)
        v, u, a = spec.text_vocab, spec.acoustic_units, spec.audio_vocab
        if v > u * u:
            raise WorldError("acoustic pairs cannot cover the text vocabulary")
        codes = rng.choice(u * u, size=v, replace=False)
        self.speech_table = np.stack([codes // u, codes % u], axis=1)
        gcodes = rng.choice(a ** self.G, size=v, replace=False)
        table = np.empty((v, self.G), dtype=np.int64)
        for g in range(self.G - 1, -1, -1):
            table[:, g] = gcodes % a
            gcodes //= a
        self.audio_table = table
        self.qa = QaTable(self.vocab, rng,
                          spec.n_train_keys, spec.n_heldout_keys)
        self._group_index = {tuple(row): i for i, row in enumerate(table.tolist())}

    # --- expansions -------------------------------------------------------

    def speech_of(self, tokens) -> list[int]:
        out = []
        for t in tokens:
            if not 0 <= t < self.spec.text_vocab:
                raise WorldError(f"unknown text token {t}")
            out.extend(int(x) for x in self.speech_table[t])
        return out

    def audio_tokens_of(self, tokens) -> list[list[int]]:
        out = []
        for t in tokens:
            if not 0 <= t < self.spec.text_vocab:
                raise WorldError(f"unknown text token {t}")
            out.append([int(x) for x in self.audio_table[t]])
        return out

    def token_of_group(self, group) -> int | None:
        return self._group_index.get(tuple(int(g) for g in group))

    # --- episode planning ---------------------------------------------------

    def sample_utterance(self, rng: np.random.Generator,
                         length: int = 6) -> list[int]:
        # fixed length: variable-length utterances leave the stop-speaking
        # decision anchored only by the heavily-downweighted wait targets,
        # which does not train reliably at this scale
        return [int(t) for t in rng.integers(1, self.spec.text_vocab,
                                             size=length)]

    def gen_episode(self, kind: str, rng: np.random.Generator,
                    split: str = "train") -> EpisodePlan:
        if kind not in EPISODE_KINDS:
            raise WorldError(f"unknown episode kind {kind}")
        keys = self.qa.train_keys if split == "train" else self.qa.heldout_keys
        base = keys[int(rng.integers(len(keys)))]
        lead = int(rng.integers(1, 7))
        plan = EpisodePlan(kind=kind, base_key=base, lead_silence=lead)
        if kind == "interrupt_dep":
            plan.trigger_index = 1
            trigger = self.qa.response_of(base)[plan.trigger_index]
            plan.interrupt_key = self.qa.followup_of(trigger)
        elif kind == "interrupt_indep":
            other = keys[int(rng.integers(len(keys)))]
            plan.interrupt_key = other
        elif kind == "backchannel":
            words = self.qa.backchannel_words
            plan.backchannel_word = words[int(rng.integers(len(words)))]
        return plan


# --------------------------------------------------------------------------
# corpus records and persistence

CORPUS_MAGIC = b"DLXC"
CORPUS_VERSION = 1

RECORD_KINDS = ("asr", "tts", "s2td", "s2tsd", "duplex")
_NONE = 0xFFFF


@dataclass
class Corpus:
    spec: SyntheticSpec
    records: list = field(default_factory=list)
    # records: ("asr"|"tts", tokens) | ("s2td"|"s2tsd", key) | ("duplex", EpisodePlan)

    def by_kind(self, kind: str) -> list:
        return [payload for k, payload in self.records if k == kind]


def generate_corpus(world: World, rng: np.random.Generator,
                    n_asr: int = 12000, n_tts: int = 8000, n_qa: int = 4000,
                    n_duplex: int = 6000) -> Corpus:
    """Sample a training corpus; everything downstream composes on the fly."""
    records = []
    for _ in range(n_asr):
        records.append(("asr", world.sample_utterance(rng)))
    for _ in range(n_tts):
        records.append(("tts", world.sample_utterance(rng)))
    train = world.qa.train_keys
    for i in range(n_qa):
        key = train[int(rng.integers(len(train)))]
        records.append(("s2td" if i % 2 == 0 else "s2tsd", key))
    # overlap behaviors are the hard part; weight them over plain exchanges
    duplex_kinds = ("plain", "interrupt_dep", "interrupt_indep", "backchannel",
                    "interrupt_dep", "interrupt_indep", "backchannel")
    for i in range(n_duplex):
        kind = duplex_kinds[i % len(duplex_kinds)]
        records.append(("duplex", world.gen_episode(kind, rng)))
    return Corpus(spec=world.spec, records=records)


def _plan_ints(plan: EpisodePlan) -> list[int]:
    ik = plan.interrupt_key or (_NONE, _NONE)
    return [EPISODE_KINDS.index(plan.kind), plan.base_key[0], plan.base_key[1],
            plan.lead_silence, ik[0], ik[1],
            _NONE if plan.trigger_index is None else plan.trigger_index,
            _NONE if plan.backchannel_word is None else plan.backchannel_word]


def _plan_from_ints(vals: list[int]) -> EpisodePlan:
    return EpisodePlan(
        kind=EPISODE_KINDS[vals[0]],
        base_key=(vals[1], vals[2]),
        lead_silence=vals[3],
        interrupt_key=None if vals[4] == _NONE else (vals[4], vals[5]),
        trigger_index=None if vals[6] == _NONE else vals[6],
        backchannel_word=None if vals[7] == _NONE else vals[7],
    )


def save_corpus(corpus: Corpus, path: str):
    spec = corpus.spec
    with open(path, "wb") as fh:
        fh.write(CORPUS_MAGIC)
        fh.write(struct.pack("<I", CORPUS_VERSION))
        fh.write(struct.pack("<Q", spec.seed))
        fh.write(struct.pack("<6H", spec.text_vocab, spec.audio_vocab,
                             spec.acoustic_units, spec.group_size,
                             spec.n_train_keys, spec.n_heldout_keys))
        fh.write(struct.pack("<I", len(corpus.records)))
        for kind, payload in corpus.records:
            ints = (_plan_ints(payload) if kind == "duplex"
                    else list(payload))
            fh.write(struct.pack("<BH", RECORD_KINDS.index(kind), len(ints)))
            fh.write(struct.pack(f"<{len(ints)}H", *ints))


def load_corpus(path: str) -> Corpus:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CORPUS_MAGIC:
        raise WorldError(f"bad corpus magic in {path}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CORPUS_VERSION:
        raise WorldError(f"unsupported corpus version {version}")
    (seed,) = struct.unpack_from("<Q", blob, 8)
    tv, av, un, gs, ntr, nho = struct.unpack_from("<6H", blob, 16)
    spec = SyntheticSpec(seed=seed, text_vocab=tv, audio_vocab=av,
                         acoustic_units=un, group_size=gs,
                         n_train_keys=ntr, n_heldout_keys=nho)
    (count,) = struct.unpack_from("<I", blob, 28)
    off = 32
    records = []
    for _ in range(count):
        kind_idx, n = struct.unpack_from("<BH", blob, off)
        off += 3
        ints = list(struct.unpack_from(f"<{n}H", blob, off))
        off += 2 * n
        kind = RECORD_KINDS[kind_idx]
        if kind == "duplex":
            records.append((kind, _plan_from_ints(ints)))
        elif kind in ("s2td", "s2tsd"):
            records.append((kind, (ints[0], ints[1])))
        else:
            records.append((kind, ints))
    return Corpus(spec=spec, records=records)
