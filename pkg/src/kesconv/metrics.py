"""Automatic response metrics: BLEU-1/2, DIST-1/2/3, ROUGE-L, knowledge affinity.

Knowledge affinity is *not* BERTScore. It is the cosine similarity of the
mean-pooled frozen token embeddings of response and knowledge, mapped to
[0, 1] as (1 + cos) / 2.

Corpus BLEU and ROUGE-L are means of the per-pair scores; DIST-n is
computed over the pooled n-grams of all responses.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .vocab import TokenSeq

FIELDS = ("bleu1", "bleu2", "dist1", "dist2", "dist3", "rouge_l", "knowledge_affinity")


def _ids(seq):
    return list(seq.ids) if isinstance(seq, TokenSeq) else list(seq)


def ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def bleu_n(candidate, reference, n=2):
    """Sentence BLEU with uniform weights over orders 1..n.

    Orders with no clipped match (including orders longer than the
    candidate) use precision 1 / (2 |candidate|) instead of 0.
    """
    cand, ref = _ids(candidate), _ids(reference)
    if not cand:
        return 0.0
    log_p = 0.0
    for k in range(1, n + 1):
        cand_grams = Counter(ngrams(cand, k))
        ref_grams = Counter(ngrams(ref, k))
        matched = sum(min(c, ref_grams[g]) for g, c in cand_grams.items())
        total = sum(cand_grams.values())
        p = matched / total if matched else 1.0 / (2 * len(cand))
        log_p += math.log(p)
    bp = min(1.0, math.exp(1.0 - len(ref) / len(cand)))
    return bp * math.exp(log_p / n)


def dist_n(responses, n):
    """Distinct n-grams over total n-grams, pooled across ``responses``."""
    grams = [g for r in responses for g in ngrams(_ids(r), n)]
    if not grams:
        return 0.0
    return len(set(grams)) / len(grams)


def rouge_l(candidate, reference):
    """F1 of LCS-based precision and recall."""
    cand, ref = _ids(candidate), _ids(reference)
    if not cand or not ref:
        return 0.0
    lcs = kernels.lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 2 * p * r / (p + r)


def knowledge_affinity(response, knowledge, table):
    """(1 + cos) / 2 between mean rows of ``table``; 0.5 if either mean is zero."""
    a, b = _ids(response), _ids(knowledge)
    if not a or not b:
        return 0.5
    table = np.asarray(table)
    u, v = table[a].mean(axis=0), table[b].mean(axis=0)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.5
    cos = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(0.0, (1.0 + cos) / 2.0))


@dataclass
class MetricsReport:
    bleu1: float
    bleu2: float
    dist1: float
    dist2: float
    dist3: float
    rouge_l: float
    knowledge_affinity: float
    n_examples: int

    def to_json(self):
        return json.dumps(asdict(self), indent=1)

    def to_table(self):
        width = max(len(f) for f in FIELDS + ("n_examples",))
        lines = [f"{'metric':<{width}}  value", f"{'-' * width}  ------"]
        lines += [f"{f:<{width}}  {getattr(self, f):.4f}" for f in FIELDS]
        lines.append(f"{'n_examples':<{width}}  {self.n_examples}")
        return "\n".join(lines)


def evaluate(candidates, references, knowledge=None, table=None):
    """Corpus report; ``knowledge``/``table`` enable the affinity column."""
    if not candidates or len(candidates) != len(references):
        raise ValueError("need equally many (>0) candidates and references")
    n = len(candidates)
    if knowledge is not None and table is not None:
        affinity = sum(knowledge_affinity(c, k, table) for c, k in zip(candidates, knowledge)) / n
    else:
        affinity = 0.5
    return MetricsReport(
        bleu1=sum(bleu_n(c, r, 1) for c, r in zip(candidates, references)) / n,
        bleu2=sum(bleu_n(c, r, 2) for c, r in zip(candidates, references)) / n,
        dist1=dist_n(candidates, 1),
        dist2=dist_n(candidates, 2),
        dist3=dist_n(candidates, 3),
        rouge_l=sum(rouge_l(c, r) for c, r in zip(candidates, references)) / n,
        knowledge_affinity=affinity,
        n_examples=n,
    )
