"""Dialogue ingestion, example extraction and the synthetic corpus generator.

Dialogue files are JSONL, one dialogue per line::

    {"id": "d0", "turns": [{"speaker": "seeker", "text": "..."},
                           {"speaker": "supporter", "text": "..."}]}

Other shapes (for instance raw ESConv releases with ``dialog``/``content``
keys) are rejected rather than guessed at; convert them first.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .vocab import split_words

log = logging.getLogger(__name__)

SPEAKERS = ("seeker", "supporter")


@dataclass(frozen=True)
class Turn:
    speaker: str
    text: str


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple


@dataclass(frozen=True)
class RawExample:
    """A supporter turn together with every turn before it."""

    id: str
    dialogue_id: str
    context: tuple  # utterance strings, oldest first
    response: str


def parse_dialogue(rec, lineno=None):
    if not isinstance(rec, dict) or set(rec) - {"id", "turns"} or "turns" not in rec or "id" not in rec:
        raise DataError('expected an object with exactly the keys "id" and "turns"', line=lineno)
    turns = rec["turns"]
    if not isinstance(turns, list) or not turns:
        raise DataError("turns must be a nonempty list", line=lineno)
    parsed = []
    for t in turns:
        if not isinstance(t, dict) or t.get("speaker") not in SPEAKERS or not isinstance(t.get("text"), str):
            raise DataError(f"each turn needs speaker in {SPEAKERS} and a string text", line=lineno)
        parsed.append(Turn(t["speaker"], t["text"]))
    return Dialogue(str(rec["id"]), tuple(parsed))


def load_dialogues(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise DataError(f"invalid JSON: {exc}", line=lineno) from exc
            out.append(parse_dialogue(rec, lineno))
    return out


def dialogue_record(d):
    return {"id": d.id, "turns": [{"speaker": t.speaker, "text": t.text} for t in d.turns]}


def extract_examples(dialogues, require=True):
    """One example per supporter turn that has at least one earlier turn."""
    out = []
    for d in dialogues:
        for i, turn in enumerate(d.turns):
            if turn.speaker == "supporter" and i > 0:
                out.append(RawExample(f"{d.id}#{i}", d.id, tuple(t.text for t in d.turns[:i]), turn.text))
    if require and not out:
        raise DataError("no usable examples: need supporter turns preceded by at least one turn")
    return out


# ---------------------------------------------------------------- synthetic corpus

_TOPICS = (
    "exams", "breakup", "layoff", "loneliness", "insomnia", "debt", "divorce", "bullying",
    "grief", "burnout", "relocation", "illness", "deadlines", "roommates", "parenting", "anxiety",
    "interviews", "friendships", "pandemic", "promotion", "wedding", "retirement", "rent", "thesis",
    "injury", "addiction", "jealousy", "procrastination", "homesickness", "commute",
)
_SYLLABLES = ("ka", "lo", "mi", "ru", "te", "sa", "vo", "ne", "pi", "du", "ze", "fo", "ga", "hu", "ji", "wa")
_FILLER = (
    "i", "my", "it", "is", "and", "so", "really", "feel", "lately", "always", "about", "the",
    "have", "been", "very", "much", "when", "with", "that", "this", "me", "to", "of", "a",
    "worried", "tired", "stuck", "sad", "hard", "day", "night", "week", "people", "family",
    "work", "think", "know", "can", "not", "do", "what", "how", "everything", "because",
)
_SEEKER = (
    "i feel so worried about {t} , {t} keeps me up .",
    "my {t} is really hard , {t} every day .",
    "the {t} makes me sad , {t} and more {t} .",
    "i am stuck with {t} , {t} is all i think about .",
)
_SUPPORTER = (
    "i understand that {t} is hard . maybe {a} could help you feel better .",
    "it sounds like {t} weighs on you . have you tried {a} when it gets tough ?",
    "that must be painful . many people with {t} find that {a} helps a lot over time .",
    "thank you for sharing about {t} . i would suggest {a} , it often makes a real difference .",
    "dealing with {t} is never easy . {a} might give you some relief .",
)
_QUESTION_SENT = (
    "my {t} , {f} , the {t} .",
    "{t} again : {f} , {t} .",
    "how to handle {t} ? {f} with {t} .",
    "the {t} , {f} , {t} and more {t} .",
)
_ANSWER = (
    "for {t} i recommend {a} . {a} works because {f} .",
    "when {t} hits , try {a} daily . with {a} , {f} .",
)


def _pseudo_words(count, rng, taken):
    out = []
    while len(out) < count:
        word = "".join(rng.choice(_SYLLABLES, size=3))
        if word not in taken:
            taken.add(word)
            out.append(word)
    return out


def _filler(rng, n):
    return " ".join(rng.choice(_FILLER, size=n))


def _fill_to(rng, templates, target, **slots):
    """Concatenate templated sentences until about ``target`` tokens."""
    text, n = [], 0
    while n < target:
        sentence = str(rng.choice(templates)).format(f=_filler(rng, int(rng.integers(1, 3))), **slots)
        text.append(sentence)
        n += len(split_words(sentence))
    return " ".join(text)


def synth_corpus(seed, n_dialogues, kb_size, out_dir=None):
    """Deterministic templated dialogues and QA knowledge base.

    Every KB entry owns a unique topic word (used in its question) and a
    unique advice word (used in its answer). Each dialogue is about one
    entry's topic and its supporter turns recommend that entry's advice
    word, so the correct retrieval is known by construction.

    Returns ``(dialogues, kb_records, truth)`` where ``truth`` maps dialogue
    id to its KB id; with ``out_dir`` also writes ``dialogues.jsonl``,
    ``kb.jsonl`` and ``truth.jsonl`` there.
    """
    if n_dialogues < 1 or kb_size < 1:
        raise ValueError("n_dialogues and kb_size must be >= 1")
    rng = np.random.default_rng(seed)
    taken = set(_TOPICS) | set(_FILLER)
    topics = list(_TOPICS[:kb_size]) + _pseudo_words(max(0, kb_size - len(_TOPICS)), rng, taken)
    advice = _pseudo_words(kb_size, rng, taken)
    kb = []
    for i in range(kb_size):
        q_len = int(np.clip(rng.normal(114, 12), 80, 150))
        a_len = int(np.clip(rng.normal(36, 5), 24, 50))
        kb.append({
            "id": f"kb{i}",
            "question": _fill_to(rng, _QUESTION_SENT, q_len - 4, t=topics[i]),
            "answer": _fill_to(rng, _ANSWER, a_len - 6, t=topics[i], a=advice[i]),
        })
    dialogues = []
    for j in range(n_dialogues):
        k = int(rng.integers(kb_size))
        turns = []
        for _ in range(int(rng.integers(1, 4))):
            turns.append({"speaker": "seeker", "text": str(rng.choice(_SEEKER)).format(t=topics[k])})
            turns.append({"speaker": "supporter", "text": str(rng.choice(_SUPPORTER)).format(t=topics[k], a=advice[k])})
        dialogues.append({"id": f"d{j}", "turns": turns, "_kb": f"kb{k}"})
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "dialogues.jsonl", "w", encoding="utf-8") as fh:
            for d in dialogues:
                fh.write(json.dumps({"id": d["id"], "turns": d["turns"]}, sort_keys=True) + "\n")
        with open(out_dir / "kb.jsonl", "w", encoding="utf-8") as fh:
            for rec in kb:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        with open(out_dir / "truth.jsonl", "w", encoding="utf-8") as fh:
            for d in dialogues:
                fh.write(json.dumps({"dialogue_id": d["id"], "kb_id": d["_kb"]}, sort_keys=True) + "\n")
    parsed = [parse_dialogue({"id": d["id"], "turns": d["turns"]}) for d in dialogues]
    return parsed, kb, {d["id"]: d["_kb"] for d in dialogues}
