"""Generative-loss training with AdamW and a linear warmup/decay schedule."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, LengthError, NumericalError
from .lm import greedy_decode
from .prompts import TRAINABLE_PROMPT_PREFIXES
from .vocab import BOS_ID, EOS_ID, SEP_ID

log = logging.getLogger(__name__)

MODES = ("kesconv", "concat_baseline", "no_knowledge")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    lr: float = 5e-5
    warmup_steps: int = 200
    total_steps: int = 1000
    seed: int = 0
    mode: str = "kesconv"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError(f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}, {self.total_steps}")


@dataclass
class TrainExample:
    """One supervised turn, already tokenized.

    ``context_ids`` are the SEP-joined prior utterances; ``response_ids``
    end with EOS; ``knowledge_ids`` hold the retrieved answer.
    """

    id: str
    context_ids: list
    knowledge_ids: list
    response_ids: list
    knowledge_id: str | None = None
    retrieval_score: float | None = None

    def __post_init__(self):
        if not self.response_ids or self.response_ids[-1] != EOS_ID:
            raise ValueError(f"example {self.id}: response must be nonempty and EOS-terminated")


def lr_at(step, cfg):
    """Linear warmup to ``cfg.lr`` over ``warmup_steps``, then linear decay to 0 at ``total_steps``."""
    if step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    return cfg.lr * max(0.0, (cfg.total_steps - step) / span)


def decays(name):
    """Weight decay applies to matrices and embeddings, never to biases or LN gains."""
    leaf = name.rsplit(".", 1)[-1]
    return not (leaf.startswith("b") or leaf == "g")


def set_mode(model, mode):
    """Freeze the parameter groups that ``mode`` must not update."""
    store = model.store
    if mode == "concat_baseline":
        store.unfreeze("rgd.")
        for prefix in TRAINABLE_PROMPT_PREFIXES:
            store.freeze(prefix)
    else:
        for prefix in TRAINABLE_PROMPT_PREFIXES:
            store.unfreeze(prefix)
        store.freeze("rgd.")


def _fit_context(context_ids, room):
    """Drop the oldest context tokens so that at most ``room`` remain."""
    if room < 0:
        return None
    return list(context_ids)[len(context_ids) - room:] if len(context_ids) > room else list(context_ids)


def build_inputs(model, example, mode, use_knowledge=True):
    """Return ``(past, input_ids, first_response_position)`` for one example."""
    max_pos = model.cfg.max_positions
    r = list(example.response_ids)
    if mode == "concat_baseline":
        prefix = list(example.knowledge_ids) + [SEP_ID]
        ctx = _fit_context(example.context_ids, max_pos - len(prefix) - len(r))
        if ctx is None:
            raise LengthError(f"example {example.id}: response of {len(r)} tokens does not fit in {max_pos} positions")
        ids = prefix + ctx + [BOS_ID] + r[:-1]
        return None, ids, len(prefix) + len(ctx)
    n_past = model.d_context + (model.d_knowledge if use_knowledge and mode == "kesconv" else 0)
    ctx = _fit_context(example.context_ids, max_pos - n_past - len(r))
    if ctx is None:
        raise LengthError(f"example {example.id}: response of {len(r)} tokens does not fit in {max_pos} positions")
    past = model.prompt_past(example.knowledge_ids, ctx, use_knowledge=use_knowledge and mode == "kesconv")
    return past, ctx + [BOS_ID] + r[:-1], len(ctx)


def compute_loss(model, example, mode="kesconv", use_knowledge=True):
    """Mean NLL of the gold response tokens under the decoder."""
    past, ids, start = build_inputs(model, example, mode, use_knowledge)
    h, _ = model.rgd.hidden(ids, past)
    n = len(example.response_ids)
    logits = model.rgd.logits(T.take(h, 0, start, start + n))
    return T.cross_entropy(logits, example.response_ids)


def example_losses(model, examples, mode="kesconv", use_knowledge=True):
    with T.no_grad():
        return [compute_loss(model, ex, mode, use_knowledge).item() for ex in examples]


def mean_token_loss(model, examples, mode="kesconv", use_knowledge=True):
    """Token-weighted mean response NLL over ``examples``."""
    losses = example_losses(model, examples, mode, use_knowledge)
    counts = [len(ex.response_ids) for ex in examples]
    return float(np.dot(losses, counts) / np.sum(counts))


def generate(model, example, mode="kesconv", max_new=32, use_knowledge=True):
    """Greedy response ids (EOS included when produced)."""
    max_pos = model.cfg.max_positions
    with T.no_grad():
        if mode == "concat_baseline":
            prefix = list(example.knowledge_ids) + [SEP_ID]
            ctx = _fit_context(example.context_ids, max(max_pos - len(prefix) - max_new - 1, 0))
            return greedy_decode(model.rgd, prefix + ctx + [BOS_ID], None, max_new)
        use_k = use_knowledge and mode == "kesconv"
        n_past = model.d_context + (model.d_knowledge if use_k else 0)
        ctx = _fit_context(example.context_ids, max(max_pos - n_past - max_new - 1, 0))
        past = model.prompt_past(example.knowledge_ids, ctx, use_knowledge=use_k)
        return greedy_decode(model.rgd, ctx + [BOS_ID], past, max_new)


class AdamW:
    """Decoupled weight decay Adam over the store's trainable entries."""

    def __init__(self, store, cfg):
        self.store = store
        self.cfg = cfg
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, lr):
        cfg = self.cfg
        self.t += 1
        params = [(n, p) for n, p in self.store.trainable() if p.grad is not None]
        if cfg.grad_clip:
            total = math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for _, p in params))
            if total > cfg.grad_clip:
                for _, p in params:
                    p.grad = p.grad * (cfg.grad_clip / total)
        c1 = 1.0 - cfg.beta1 ** self.t
        c2 = 1.0 - cfg.beta2 ** self.t
        for name, p in params:
            g = p.grad
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            if cfg.weight_decay and decays(name):
                p.data = p.data * (1.0 - lr * cfg.weight_decay)
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


@dataclass
class TrainResult:
    trace: list = field(default_factory=list)  # (step, lr, loss)

    @property
    def losses(self):
        return [loss for _, _, loss in self.trace]


def batches(n_examples, batch_size, seed):
    """Endless stream of index batches from per-epoch seeded shuffles."""
    rng = np.random.default_rng(seed)
    pool = []
    while True:
        if len(pool) < batch_size:
            pool.extend(rng.permutation(n_examples).tolist())
        yield pool[:batch_size]
        del pool[:batch_size]


def train(model, examples, cfg, progress=None):
    """Run ``cfg.total_steps`` AdamW updates; returns the per-step loss trace.

    ``progress`` is an optional callable ``(step, lr, loss)`` invoked every step.
    """
    if not examples:
        raise ValueError("no training examples")
    set_mode(model, cfg.mode)
    opt = AdamW(model.store, cfg)
    result = TrainResult()
    stream = batches(len(examples), min(cfg.batch_size, len(examples)), cfg.seed)
    for step in range(1, cfg.total_steps + 1):
        idx = next(stream)
        model.store.zero_grad()
        batch_loss = 0.0
        for i in idx:
            loss = compute_loss(model, examples[i], cfg.mode)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(step, [examples[j].id for j in idx])
            batch_loss += value / len(idx)
            T.backward(T.scale(loss, 1.0 / len(idx)))
        lr = lr_at(step, cfg)
        opt.step(lr)
        result.trace.append((step, lr, batch_loss))
        if progress is not None:
            progress(step, lr, batch_loss)
        elif step % 50 == 0:
            log.info("step %d lr %.3g loss %.4f", step, lr, batch_loss)
    return result


def write_loss_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "lr", "loss"])
        for step, lr, loss in trace:
            w.writerow([step, repr(float(lr)), repr(float(loss))])
