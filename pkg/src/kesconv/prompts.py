"""Knowledge- and context-aware prompt encoders.

Each encoder is a full copy of the backbone. It reads its input tokens
followed by a block of trainable virtual prompt embeddings; the final
hidden vector at every prompt position (which, being causal, has seen the
whole input and all earlier prompts) is mapped by a two-layer MLP to one
key/value pair per decoder layer. The two resulting pasts are concatenated
knowledge-first and handed to the frozen decoder.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError, LengthError
from .lm import LMConfig, MiniLM, PastState, init_backbone
from .params import ParamStore
from .vocab import SEP_ID, SPECIALS

DEFAULT_KNOWLEDGE_PROMPTS = 5
DEFAULT_CONTEXT_PROMPTS = 10
KNOWLEDGE_MAX_TOKENS = 64
CONTEXT_MAX_TOKENS = 128

BACKBONES = ("rgd", "cpe", "kpe")
TRAINABLE_PROMPT_PREFIXES = ("cpe.", "kpe.", "prompt.", "reparam.")


def truncate_knowledge(ids, limit=KNOWLEDGE_MAX_TOKENS):
    return list(ids)[:limit]


def context_token_ids(utterances, limit=CONTEXT_MAX_TOKENS):
    """Join utterance id lists with SEP, dropping the oldest turns to fit ``limit``.

    If the most recent turn alone is too long, its oldest tokens are cut.
    """
    kept, total = [], 0
    for utt in reversed(utterances):
        cost = len(utt) + (1 if kept else 0)
        if total + cost > limit:
            if not kept:
                kept.append(list(utt)[-limit:])
            break
        kept.append(list(utt))
        total += cost
    out = []
    for utt in reversed(kept):
        if out:
            out.append(SEP_ID)
        out.extend(utt)
    return out


def reparameterize(store, name, hidden, cfg):
    """MLP(hidden) reshaped into one (key, value) pair per layer."""
    pre = f"reparam.{name}."
    z = T.tanh(T.add(T.matmul(hidden, store[pre + "w1"]), store[pre + "b1"]))
    z = T.add(T.matmul(z, store[pre + "w2"]), store[pre + "b2"])
    d, D, H, hd = hidden.shape[0], cfg.hidden_dim, cfg.n_heads, cfg.head_dim
    layers = []
    for layer in range(cfg.n_layers):
        pair = []
        for j in range(2):
            lo = (2 * layer + j) * D
            block = T.reshape(T.take(z, 1, lo, lo + D), (d, H, hd))
            pair.append(T.permute(block, (1, 0, 2)))
        layers.append(tuple(pair))
    return PastState(layers, n_virtual=d)


def combine(knowledge_past, context_past):
    """Concatenate two virtual pasts along positions, knowledge block first."""
    if knowledge_past.n_layers != context_past.n_layers:
        raise DimensionError(f"layer mismatch: {knowledge_past.n_layers} vs {context_past.n_layers}")
    kref, cref = knowledge_past.layers[0][0].shape, context_past.layers[0][0].shape
    if (kref[0], kref[2]) != (cref[0], cref[2]):
        raise DimensionError(f"head layout mismatch: {kref} vs {cref}")
    if knowledge_past.n_virtual != knowledge_past.length or context_past.n_virtual != context_past.length:
        raise DimensionError("combine expects pasts made entirely of prompt encodings")
    layers = [
        (T.concat([kk, ck], axis=1), T.concat([kv, cv], axis=1))
        for (kk, kv), (ck, cv) in zip(knowledge_past.layers, context_past.layers)
    ]
    return PastState(layers, n_virtual=knowledge_past.length + context_past.length)


class KESConv:
    """Decoder plus the two prompt encoders, all backed by one ParamStore."""

    def __init__(self, cfg, store, d_knowledge=DEFAULT_KNOWLEDGE_PROMPTS, d_context=DEFAULT_CONTEXT_PROMPTS,
                 knowledge_max_tokens=KNOWLEDGE_MAX_TOKENS):
        if d_knowledge < 1 or d_context < 1:
            raise DimensionError("prompt counts must be >= 1")
        self.cfg = cfg
        self.store = store
        self.d_knowledge = d_knowledge
        self.d_context = d_context
        self.knowledge_max_tokens = knowledge_max_tokens
        self.rgd = MiniLM(cfg, store, "rgd.")
        self.cpe = MiniLM(cfg, store, "cpe.")
        self.kpe = MiniLM(cfg, store, "kpe.")

    @classmethod
    def initialize(cls, cfg: LMConfig, seed=0, d_knowledge=DEFAULT_KNOWLEDGE_PROMPTS,
                   d_context=DEFAULT_CONTEXT_PROMPTS, knowledge_max_tokens=KNOWLEDGE_MAX_TOKENS):
        """Three identical backbone copies, warm-started prompts, fresh MLPs; decoder frozen."""
        rng = np.random.default_rng(seed)
        backbone = init_backbone(cfg, rng)
        store = ParamStore()
        for prefix in BACKBONES:
            MiniLM.create(cfg, store, prefix + ".", backbone)
        wte = backbone["wte"]
        # most frequent non-special tokens sit right after the reserved ids
        n_words = max(cfg.vocab_size - len(SPECIALS), 1)
        for name, count in (("knowledge", d_knowledge), ("context", d_context)):
            rows = len(SPECIALS) + np.arange(count) % n_words
            rows = np.minimum(rows, cfg.vocab_size - 1)
            store.add(f"prompt.{name}.embeddings", wte[rows].copy())
        D, out = cfg.hidden_dim, cfg.n_layers * 2 * cfg.hidden_dim
        for name in ("knowledge", "context"):
            store.add(f"reparam.{name}.w1", rng.normal(0.0, cfg.init_std, (D, D)))
            store.add(f"reparam.{name}.b1", np.zeros(D))
            store.add(f"reparam.{name}.w2", rng.normal(0.0, cfg.init_std, (D, out)))
            store.add(f"reparam.{name}.b2", np.zeros(out))
        store.freeze("rgd.")
        return cls(cfg, store, d_knowledge, d_context, knowledge_max_tokens)

    def _encode(self, encoder, name, ids, count):
        ids = list(ids)
        budget = self.cfg.max_positions - count
        if budget < 0:
            raise LengthError(f"{count} prompts exceed max_positions={self.cfg.max_positions}")
        ids = ids[:budget]
        prompts = self.store[f"prompt.{name}.embeddings"]
        h, _ = encoder.hidden(ids, extra_embeds=prompts)
        n = len(ids)
        return reparameterize(self.store, name, T.take(h, 0, n, n + count), self.cfg)

    def encode_knowledge_prompt(self, knowledge_ids):
        """Length-``d_knowledge`` past from the (right-truncated) knowledge tokens."""
        return self._encode(self.kpe, "knowledge", truncate_knowledge(knowledge_ids, self.knowledge_max_tokens),
                            self.d_knowledge)

    def encode_context_prompt(self, context_ids):
        """Length-``d_context`` past from already-joined context ids."""
        return self._encode(self.cpe, "context", context_ids, self.d_context)

    def prompt_past(self, knowledge_ids, context_ids, use_knowledge=True):
        ctx = self.encode_context_prompt(context_ids)
        know = self.encode_knowledge_prompt(knowledge_ids) if use_knowledge else self.rgd.empty_past()
        return combine(know, ctx)
