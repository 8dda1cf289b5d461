"""Decoder-only transformer with an injectable key/value past.

One architecture serves three roles: the frozen response decoder and the
two trainable prompt encoders. Parameters live in a shared ``ParamStore``
under a per-instance prefix (``rgd.``, ``cpe.``, ``kpe.``).

Position convention
-------------------
A :class:`PastState` records how many of its entries are *virtual* (prompt
encodings that correspond to no real token). Real tokens fed after a past
start at position index ``past.length - past.n_virtual``: a past made of
prompts leaves positions at 0, a past cached from real tokens shifts them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, LengthError
from .vocab import EOS_ID, TokenSeq


@dataclass(frozen=True)
class LMConfig:
    vocab_size: int
    n_layers: int = 2
    n_heads: int = 2
    hidden_dim: int = 64
    max_positions: int = 256
    tie_embeddings: bool = True
    init_std: float = 0.125
    embed_std: float = 0.5

    def __post_init__(self):
        for name in ("vocab_size", "n_layers", "n_heads", "hidden_dim", "max_positions"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.hidden_dim % self.n_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}")

    @property
    def head_dim(self):
        return self.hidden_dim // self.n_heads


class PastState:
    """Per-layer ``(keys, values)``, each ``[n_heads, length, head_dim]``."""

    __slots__ = ("layers", "n_virtual")

    def __init__(self, layers, n_virtual=0):
        layers = [(T.as_tensor(k), T.as_tensor(v)) for k, v in layers]
        if not layers:
            raise DimensionError("PastState needs at least one layer")
        ref = layers[0][0].shape
        for k, v in layers:
            if k.ndim != 3 or k.shape != ref or v.shape != ref:
                raise DimensionError(f"inconsistent past shapes: {k.shape}/{v.shape} vs {ref}")
        if not 0 <= n_virtual <= ref[1]:
            raise DimensionError(f"n_virtual {n_virtual} outside [0, {ref[1]}]")
        self.layers = layers
        self.n_virtual = n_virtual

    @classmethod
    def empty(cls, n_layers, n_heads, head_dim):
        z = np.zeros((n_heads, 0, head_dim))
        return cls([(z, z) for _ in range(n_layers)], n_virtual=0)

    @property
    def length(self):
        return self.layers[0][0].shape[1]

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def position_offset(self):
        return self.length - self.n_virtual

    def __len__(self):
        return self.length

    def slice(self, start, stop):
        """Entries ``[start:stop]``; the result counts as fully virtual iff its source range is."""
        layers = [(T.take(k, 1, start, stop), T.take(v, 1, start, stop)) for k, v in self.layers]
        return PastState(layers, n_virtual=max(0, min(stop, self.n_virtual) - start))


def init_backbone(cfg, rng):
    """Fresh weights: normal(0, init_std) for matrices, zeros for biases, ones for gains."""
    D, V = cfg.hidden_dim, cfg.vocab_size
    std = cfg.init_std
    w = {
        "wte": rng.normal(0.0, cfg.embed_std, (V, D)),
        "wpe": rng.normal(0.0, std, (cfg.max_positions, D)),
    }
    for i in range(cfg.n_layers):
        p = f"h.{i}."
        w[p + "ln1.g"] = np.ones(D)
        w[p + "ln1.b"] = np.zeros(D)
        w[p + "attn.w_qkv"] = rng.normal(0.0, std, (D, 3 * D))
        w[p + "attn.b_qkv"] = np.zeros(3 * D)
        w[p + "attn.w_o"] = rng.normal(0.0, std, (D, D))
        w[p + "attn.b_o"] = np.zeros(D)
        w[p + "ln2.g"] = np.ones(D)
        w[p + "ln2.b"] = np.zeros(D)
        w[p + "mlp.w_fc"] = rng.normal(0.0, std, (D, 4 * D))
        w[p + "mlp.b_fc"] = np.zeros(4 * D)
        w[p + "mlp.w_proj"] = rng.normal(0.0, std, (4 * D, D))
        w[p + "mlp.b_proj"] = np.zeros(D)
    w["ln_f.g"] = np.ones(D)
    w["ln_f.b"] = np.zeros(D)
    if not cfg.tie_embeddings:
        w["lm_head"] = rng.normal(0.0, std, (D, V))
    return w


class MiniLM:
    """View over the parameters ``prefix*`` of a store, with forward/decoding."""

    def __init__(self, cfg, store, prefix):
        self.cfg = cfg
        self.store = store
        self.prefix = prefix
        self.record_attention = False
        self.last_attention = []

    @classmethod
    def create(cls, cfg, store, prefix, weights):
        for name, arr in weights.items():
            store.add(prefix + name, np.array(arr, copy=True))
        return cls(cfg, store, prefix)

    def p(self, name):
        return self.store[self.prefix + name]

    def empty_past(self):
        return PastState.empty(self.cfg.n_layers, self.cfg.n_heads, self.cfg.head_dim)

    def token_embeddings(self):
        return self.p("wte").data

    # ------------------------------------------------------------ core pass

    def _attention(self, x, i, past_kv, n_past):
        cfg = self.cfg
        D, H, hd = cfg.hidden_dim, cfg.n_heads, cfg.head_dim
        n = x.shape[0]
        pre = f"h.{i}."
        a = T.layer_norm(x, self.p(pre + "ln1.g"), self.p(pre + "ln1.b"))
        qkv = T.add(T.matmul(a, self.p(pre + "attn.w_qkv")), self.p(pre + "attn.b_qkv"))

        def heads(t):
            return T.permute(T.reshape(t, (n, H, hd)), (1, 0, 2))

        q = heads(T.take(qkv, 1, 0, D))
        k = T.concat([past_kv[0], heads(T.take(qkv, 1, D, 2 * D))], axis=1)
        v = T.concat([past_kv[1], heads(T.take(qkv, 1, 2 * D, 3 * D))], axis=1)
        scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(hd))
        if n > 1:
            # query j may see every past entry and new tokens 0..j
            blocked = np.triu(np.ones((n, n), dtype=bool), k=1)
            mask = np.concatenate([np.zeros((n, n_past), dtype=bool), blocked], axis=1)
            scores = T.masked_fill(scores, mask)
        weights = T.softmax(scores, axis=-1)
        if self.record_attention:
            self.last_attention.append(weights.data)
        out = T.reshape(T.permute(T.matmul(weights, v), (1, 0, 2)), (n, D))
        out = T.add(T.matmul(out, self.p(pre + "attn.w_o")), self.p(pre + "attn.b_o"))
        return out, (k, v)

    def _mlp(self, x, i):
        pre = f"h.{i}."
        a = T.layer_norm(x, self.p(pre + "ln2.g"), self.p(pre + "ln2.b"))
        h = T.gelu(T.add(T.matmul(a, self.p(pre + "mlp.w_fc")), self.p(pre + "mlp.b_fc")))
        return T.add(T.matmul(h, self.p(pre + "mlp.w_proj")), self.p(pre + "mlp.b_proj"))

    def hidden(self, ids, past=None, extra_embeds=None):
        """Final-layer-norm hidden states ``[n, D]`` and the extended past.

        ``extra_embeds`` (``[m, D]``) are appended after the token embeddings
        as virtual inputs; they take position indices after the tokens.
        """
        cfg = self.cfg
        past = past if past is not None else self.empty_past()
        if past.n_layers != cfg.n_layers:
            raise DimensionError(f"past has {past.n_layers} layers, model has {cfg.n_layers}")
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        parts = []
        if ids.size:
            parts.append(T.embedding_lookup(self.p("wte"), ids))
        if extra_embeds is not None:
            parts.append(extra_embeds)
        if not parts:
            raise LengthError("forward needs at least one input position")
        x = parts[0] if len(parts) == 1 else T.concat(parts, axis=0)
        n = x.shape[0]
        if past.length + n > cfg.max_positions:
            raise LengthError(f"{n} inputs after a past of {past.length} exceed max_positions={cfg.max_positions}")
        start = past.position_offset
        x = T.add(x, T.embedding_lookup(self.p("wpe"), np.arange(start, start + n)))
        if self.record_attention:
            self.last_attention = []
        new_layers = []
        for i in range(cfg.n_layers):
            attn, kv = self._attention(x, i, past.layers[i], past.length)
            x = T.add(x, attn)
            x = T.add(x, self._mlp(x, i))
            new_layers.append(kv)
        h = T.layer_norm(x, self.p("ln_f.g"), self.p("ln_f.b"))
        return h, PastState(new_layers, n_virtual=past.n_virtual)

    def logits(self, h):
        if self.cfg.tie_embeddings:
            return T.matmul(h, T.transpose(self.p("wte")))
        return T.matmul(h, self.p("lm_head"))

    def forward(self, ids, past=None):
        """Logits ``[len(ids), vocab]`` and the past extended by this call."""
        h, new_past = self.hidden(ids, past)
        return self.logits(h), new_past


def greedy_decode(model, context_ids, past, max_new):
    """Argmax decoding; stops after emitting EOS or ``max_new`` tokens.

    ``np.argmax`` returns the first maximum, so ties go to the lowest id.
    """
    if max_new < 1:
        raise ValueError("max_new must be >= 1")
    out = []
    with T.no_grad():
        logits, cache = model.forward(context_ids, past)
        while True:
            tok = int(np.argmax(logits.data[-1]))
            out.append(tok)
            if tok == EOS_ID or len(out) >= max_new:
                break
            if cache.length + 1 > model.cfg.max_positions:
                break
            logits, cache = model.forward([tok], cache)
    return TokenSeq(out)
