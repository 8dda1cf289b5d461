"""Shared fixtures-by-function and independent reference implementations."""

from __future__ import annotations

import itertools
import math

import numpy as np

from kesconv.data import extract_examples, synth_corpus
from kesconv.lm import LMConfig, MiniLM, init_backbone
from kesconv.params import ParamStore
from kesconv.prompts import KESConv
from kesconv.retriever import QAEntry
from kesconv.trainer import TrainExample
from kesconv.vocab import EOS_ID

# Small enough for finite differences, large enough to exercise every path.
TINY = LMConfig(vocab_size=13, n_layers=2, n_heads=2, hidden_dim=8, max_positions=48)


def tiny_lm(seed=0, cfg=TINY, prefix="m."):
    store = ParamStore()
    return MiniLM.create(cfg, store, prefix, init_backbone(cfg, np.random.default_rng(seed)))


def tiny_kesconv(seed=0, cfg=TINY, d_knowledge=2, d_context=3):
    return KESConv.initialize(cfg, seed=seed, d_knowledge=d_knowledge, d_context=d_context)


def random_ids(rng, n, vocab_size, low=5):
    return rng.integers(low, vocab_size, size=n).tolist()


def random_example(rng, vocab_size, n_ctx=6, n_know=5, n_resp=4, ident="x"):
    return TrainExample(
        ident,
        random_ids(rng, n_ctx, vocab_size),
        random_ids(rng, n_know, vocab_size),
        random_ids(rng, n_resp - 1, vocab_size) + [EOS_ID],
    )


def kb_entries(records):
    return [QAEntry(r["id"], r["question"], r["answer"]) for r in records]


def synthetic_split(seed, n_dialogues, kb_size):
    dialogues, kb, truth = synth_corpus(seed, n_dialogues, kb_size)
    return dialogues, kb_entries(kb), truth, extract_examples(dialogues)


# ---------------------------------------------------------------- numeric oracles


def triple_loop_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def direct_log_softmax(row):
    z = sum(math.exp(v) for v in row)
    return [v - math.log(z) for v in row]


def scan_argmax(matrix, query):
    """First index of the maximal inner product, scores summed left to right."""
    best_i, best = 0, None
    for i, row in enumerate(matrix):
        s = 0.0
        for a, b in zip(row, query):
            s += a * b
        if best is None or s > best:
            best_i, best = i, s
    return best_i, best


# ---------------------------------------------------------------- metric oracles
# Deliberately naive: no Counter, no dynamic programming.


def _grams(seq, n):
    out = []
    for i in range(len(seq) - n + 1):
        out.append(tuple(seq[i:i + n]))
    return out


def _occurrences(gram, grams):
    c = 0
    for g in grams:
        if g == gram:
            c += 1
    return c


def brute_bleu(cand, ref, n):
    if not cand:
        return 0.0
    logs = []
    for k in range(1, n + 1):
        cg, rg = _grams(cand, k), _grams(ref, k)
        distinct = []
        for g in cg:
            if g not in distinct:
                distinct.append(g)
        matched = 0
        for g in distinct:
            matched += min(_occurrences(g, cg), _occurrences(g, rg))
        p = matched / len(cg) if matched else 1.0 / (2 * len(cand))
        logs.append(math.log(p))
    bp = 1.0 if len(cand) > len(ref) else math.exp(1 - len(ref) / len(cand))
    return bp * math.exp(sum(logs) / n)


def brute_dist(responses, n):
    grams = []
    for r in responses:
        grams.extend(_grams(r, n))
    if not grams:
        return 0.0
    distinct = []
    for g in grams:
        if g not in distinct:
            distinct.append(g)
    return len(distinct) / len(grams)


def _is_subsequence(sub, seq):
    it = iter(seq)
    return all(any(x == y for y in it) for x in sub)


def brute_lcs(a, b):
    """Longest common subsequence by enumerating subsequences of the shorter input."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for size in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), size):
            if _is_subsequence([short[i] for i in idx], long_):
                return size
    return 0


def brute_rouge_l(cand, ref):
    if not cand or not ref:
        return 0.0
    lcs = brute_lcs(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 2 * p * r / (p + r)
