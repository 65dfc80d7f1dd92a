"""Behavioral evaluation: scripted episodes, metrics, reports.

Episodes are composed exactly like training examples; the harness streams the
user side into a fresh session, lets the model free-run, and measures from
the transcript. Events are anchored to composition metadata: interruption
onset, backchannel step, query end. Steps convert to milliseconds at the
nominal 160 ms/step timeline rate.

Behavior tags (interruption episodes): RESPOND when the post-stop content
matches the interrupting query's answer (>= 3 of 4 tokens), RESUME when it
matches the original response's remaining suffix, UNKNOWN otherwise.
UNCERTAIN is reserved: the synthetic world has no way to signal
misunderstanding, so it is reported as a structural zero.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from duplexlab.compose import Composer, ComposerConfig, DuplexExample
from duplexlab.engine import Session, StepOutput
from duplexlab.model import DuplexModel
from duplexlab.vocab import MS_PER_STEP
from duplexlab.world import ANSWER_LEN, World

TAGS = ("RESPOND", "RESUME", "UNKNOWN", "UNCERTAIN")
MISS_WINDOW = 10          # steps after onset before an interruption counts as missed
POST_SCAN = 16            # steps scanned after a stop for the reply content
TAIL_STEPS = 14           # free-running slack appended after the scripted region


def edit_distance(a, b) -> int:
    """Levenshtein distance (substitutions + insertions + deletions)."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[len(b)]


@dataclass
class EpisodeResult:
    kind: str
    takeover: bool
    stop_latency_steps: int | None = None
    stop_latency_ms: int | None = None
    respond_latency_steps: int | None = None
    respond_latency_ms: int | None = None
    tag: str = "UNKNOWN"
    resumed: bool | None = None          # backchannel suites
    contamination: float | None = None   # coherence probe
    contaminated_flag: bool | None = None


def run_episode(model: DuplexModel, ex: DuplexExample,
                suppress_int: bool = False,
                tail: int = TAIL_STEPS) -> list[StepOutput]:
    session = Session(model, suppress_int=suppress_int)
    transcript = []
    for t in range(ex.steps):
        transcript.append(session.step(ex.user[t]))
    for _ in range(tail):
        transcript.append(session.step(("wait",)))
    return transcript


def _content(model: DuplexModel, tok: int) -> bool:
    return model.vocab.is_text_content(tok)


def _expected_original(ex: DuplexExample, step: int, text_wait: int) -> int:
    resp = ex.meta["response_tokens"]
    r = ex.meta["response_start"]
    if r <= step < r + len(resp):
        return resp[step - r]
    return text_wait


def _int_at(model: DuplexModel, out: StepOutput) -> bool:
    voc = model.vocab
    if out.text_token == voc.text_int:
        return True
    return out.audio_group is not None and out.audio_group[0] == voc.audio_int


def _post_content(model, transcript, start, limit=POST_SCAN):
    toks = []
    for out in transcript[start:start + limit]:
        if _content(model, out.text_token):
            toks.append(out.text_token)
    return toks


def _endpointed(model, transcript, start):
    """Content tokens from `start`, ending at the first wait after onset."""
    toks = []
    for out in transcript[start:]:
        if _content(model, out.text_token):
            toks.append(out.text_token)
        elif toks:
            break
    return toks


def _matches(got, want, need=3):
    if not got:
        return False
    k = min(len(want), ANSWER_LEN)
    hits = sum(1 for i in range(min(k, len(got))) if got[i] == want[i])
    return hits >= min(need, k)


def classify_interruption(model: DuplexModel, ex: DuplexExample,
                          transcript: list[StepOutput]) -> EpisodeResult:
    voc = model.vocab
    onset = ex.meta["onset"]
    r = ex.meta["response_start"]
    resp = ex.meta["response_tokens"]
    ians = ex.meta["interrupt_answer"]

    stop = None
    for s in range(onset, min(onset + MISS_WINDOW + 1, len(transcript))):
        expected = _expected_original(ex, s, voc.text_wait)
        if transcript[s].text_token != expected or _int_at(model, transcript[s]):
            stop = s
            break
    res = EpisodeResult(kind=ex.kind, takeover=stop is not None)
    if stop is None:
        cont = _post_content(model, transcript, onset + 1)
        suffix = resp[onset + 1 - r:] if onset + 1 - r >= 0 else resp
        res.tag = "RESUME" if _matches(cont, suffix) else "UNKNOWN"
        return res

    res.stop_latency_steps = stop - onset
    res.stop_latency_ms = res.stop_latency_steps * MS_PER_STEP
    respond_step = None
    for s in range(stop, len(transcript)):
        if _content(model, transcript[s].text_token):
            respond_step = s
            break
    if respond_step is not None:
        res.respond_latency_steps = respond_step - onset
        res.respond_latency_ms = res.respond_latency_steps * MS_PER_STEP
    post = _post_content(model, transcript, stop)
    remaining = resp[max(0, stop - r):]
    if _matches(post, ians):
        res.tag = "RESPOND"
    elif remaining and _matches(post, remaining):
        res.tag = "RESUME"
    else:
        res.tag = "UNKNOWN"
    return res


BACKCHANNEL_REGION = 3  # the 1-step blip plus the model's demonstrated wake


def classify_backchannel(model: DuplexModel, ex: DuplexExample,
                         transcript: list[StepOutput]) -> EpisodeResult:
    voc = model.vocab
    b = ex.meta["backchannel_step"]
    ok = True
    for s in range(b, min(b + BACKCHANNEL_REGION, ex.steps)):
        expected = _expected_original(ex, s, voc.text_wait)
        if transcript[s].text_token != expected or _int_at(model, transcript[s]):
            ok = False
            break
    # an INT shortly after the region still counts as yielding the floor
    if ok:
        for s in range(b, min(b + 6, ex.steps)):
            if _int_at(model, transcript[s]):
                ok = False
                break
    res = EpisodeResult(kind=ex.kind, takeover=not ok, resumed=ok)
    res.tag = "RESUME" if ok else "UNKNOWN"
    if not ok:
        res.stop_latency_steps = max(0, s - b)
        res.stop_latency_ms = res.stop_latency_steps * MS_PER_STEP
    return res


def classify_smooth(model: DuplexModel, ex: DuplexExample,
                    transcript: list[StepOutput]) -> EpisodeResult:
    end = ex.meta["query_end"]
    respond_step = None
    for s in range(end + 1, min(end + 1 + MISS_WINDOW, len(transcript))):
        if _content(model, transcript[s].text_token):
            respond_step = s
            break
    res = EpisodeResult(kind=ex.kind, takeover=respond_step is not None)
    if respond_step is not None:
        res.respond_latency_steps = respond_step - end
        res.respond_latency_ms = res.respond_latency_steps * MS_PER_STEP
        res.tag = "RESPOND"
    return res


# ---------------------------------------------------------------------------
# suites

def _episode_plans(world: World, kind: str, n: int, seed: int, split: str):
    rng = np.random.default_rng([seed, 71])
    kinds = {
        "interruption": ["interrupt_dep", "interrupt_indep"],
        "backchannel": ["backchannel"],
        "smooth": ["smooth"],
    }[kind]
    return [world.gen_episode(kinds[i % len(kinds)], rng, split=split)
            for i in range(n)], rng


def run_suite(model: DuplexModel, world: World, kind: str, n: int, seed: int,
              split: str = "heldout",
              composer_cfg: ComposerConfig | None = None) -> dict:
    if n <= 0:
        raise ValueError("need n >= 1 episodes")
    composer = Composer(world, composer_cfg or ComposerConfig(delay=model.D))
    plans, rng = _episode_plans(world, kind, n, seed, split)
    results = []
    for plan in plans:
        ex = composer.compose_duplex(plan, rng)
        transcript = run_episode(model, ex)
        if kind == "interruption":
            results.append(classify_interruption(model, ex, transcript))
        elif kind == "backchannel":
            results.append(classify_backchannel(model, ex, transcript))
        else:
            results.append(classify_smooth(model, ex, transcript))
    return aggregate(kind, results, n, seed, model)


def aggregate(kind: str, results: list[EpisodeResult], n: int, seed: int,
              model: DuplexModel) -> dict:
    takeovers = [r for r in results if r.takeover]
    stop = [r.stop_latency_steps for r in takeovers
            if r.stop_latency_steps is not None]
    respond = [r.respond_latency_steps for r in takeovers
               if r.respond_latency_steps is not None]
    tags = {tag: sum(1 for r in results if r.tag == tag) / n for tag in TAGS}
    agg = {
        "suite": kind,
        "n": n,
        "seed": seed,
        "variant": model.cfg.variant,
        "tor": len(takeovers) / n,
        "tags": tags,
        "mean_stop_latency_steps": _mean(stop),
        "mean_stop_latency_ms": _mean([s * MS_PER_STEP for s in stop]),
        "mean_respond_latency_steps": _mean(respond),
        "mean_respond_latency_ms": _mean([s * MS_PER_STEP for s in respond]),
        "resume_rate": (sum(1 for r in results if r.resumed) / n
                        if kind == "backchannel" else None),
        "episodes": [asdict(r) for r in results],
    }
    return agg


def _mean(vals):
    return None if not vals else float(np.mean(vals))


# ---------------------------------------------------------------------------
# task accuracy

def task_accuracy(model: DuplexModel, world: World, task: str, n: int,
                  seed: int) -> dict:
    composer = Composer(world, ComposerConfig(delay=model.D))
    rng = np.random.default_rng([seed, 137])
    errors = []
    exact = []
    for i in range(n):
        if task == "asr":
            utt = world.sample_utterance(rng)
            ex = composer.compose_asr(utt)
            session = Session(model, decode_audio=False)
            transcript = [session.step(ex.user[t]) for t in range(ex.steps)]
            transcript += [session.step(("wait",)) for _ in range(TAIL_STEPS)]
            speech_end = ex.meta["speech_end"]
            # the world's rate is fixed (2 units per token), so the
            # transcript length is determined by the speech length
            hyp = _endpointed(model, transcript, speech_end + 1)[:len(utt)]
            errors.append(edit_distance(hyp, utt) / len(utt))
        elif task == "tts":
            utt = world.sample_utterance(rng)
            ex = composer.compose_tts(utt)
            session = Session(model)
            groups = []
            for t in range(ex.steps):
                out = session.step(ex.user[t], force_text=int(ex.text[t]))
                groups.append(out.audio_group)
            start = 1 + model.D
            hyp = [tok for s in range(start, start + len(utt))
                   for tok in groups[s]]
            ref = [tok for grp in world.audio_tokens_of(utt) for tok in grp]
            errors.append(edit_distance(hyp, ref) / len(ref))
        elif task in ("s2td", "s2tsd"):
            keys = world.qa.heldout_keys
            key = keys[int(rng.integers(len(keys)))]
            ex = (composer.compose_s2td(key) if task == "s2td"
                  else composer.compose_s2tsd(key))
            session = Session(model, decode_audio=(task == "s2tsd"))
            transcript = [session.step(ex.user[t]) for t in range(ex.steps)]
            transcript += [session.step(("wait",)) for _ in range(TAIL_STEPS)]
            hyp = _endpointed(model, transcript,
                              ex.meta["speech_end"] + 1)[:ANSWER_LEN]
            exact.append(hyp == ex.meta["answer"])
        else:
            raise ValueError(f"unknown task {task}")
    out = {"task": task, "n": n, "seed": seed, "variant": model.cfg.variant}
    if task in ("asr", "tts"):
        out["token_error_rate"] = float(np.mean(errors))
    else:
        out["exact_answer_rate"] = float(np.mean(exact))
    return out


# ---------------------------------------------------------------------------
# missed-interruption coherence probe

def contamination_score(continuation, suffix) -> float:
    """1 - LCP(continuation, original suffix) / |suffix|."""
    if not suffix:
        return 0.0
    lcp = 0
    for a, b in zip(continuation, suffix):
        if a != b:
            break
        lcp += 1
    return 1.0 - lcp / len(suffix)


def coherence_probe(model: DuplexModel, world: World, n: int, seed: int,
                    split: str = "heldout") -> dict:
    """Force-missed interruptions (INT suppressed at decode) and measure how
    far the continued generation drifts from the original target suffix."""
    composer = Composer(world, ComposerConfig(delay=model.D))
    plans, rng = _episode_plans(world, "interruption", n, seed, split)
    rows = []
    for plan in plans:
        ex = composer.compose_duplex(plan, rng)
        transcript = run_episode(model, ex, suppress_int=True)
        onset = ex.meta["onset"]
        if any(_int_at(model, transcript[s])
               for s in range(onset, min(onset + MISS_WINDOW + 1, len(transcript)))):
            continue  # INT slipped through; not a missed interruption
        r = ex.meta["response_start"]
        resp = ex.meta["response_tokens"]
        suffix = resp[onset + 1 - r:]
        cont = _post_content(model, transcript, onset + 1,
                             limit=len(transcript) - onset)
        contamination = contamination_score(cont, suffix)
        flag = any(tok in cont for tok in ex.meta["interrupt_answer"])
        rows.append(EpisodeResult(kind=ex.kind, takeover=False,
                                  contamination=contamination,
                                  contaminated_flag=flag, tag="RESUME"))
    scores = [r.contamination for r in rows]
    return {
        "suite": "coherence",
        "variant": model.cfg.variant,
        "n_missed": len(rows),
        "seed": seed,
        "mean_contamination": _mean(scores),
        "median_contamination": (None if not scores
                                 else float(np.median(scores))),
        "flag_rate": _mean([1.0 if r.contaminated_flag else 0.0 for r in rows]),
        "episodes": [asdict(r) for r in rows],
    }


# ---------------------------------------------------------------------------
# reports

def write_report(report: dict, path: str, checkpoint_hash: str | None = None):
    doc = dict(report)
    if checkpoint_hash:
        doc["checkpoint_hash"] = checkpoint_hash
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    csv_path = path.rsplit(".", 1)[0] + ".csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        for key in sorted(doc):
            if key == "episodes":
                continue
            val = doc[key]
            if isinstance(val, dict):
                for k2 in sorted(val):
                    writer.writerow([f"{key}.{k2}", val[k2]])
            else:
                writer.writerow([key, val])
