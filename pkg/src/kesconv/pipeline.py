"""End-to-end steps shared by the CLI and the tests.

Run directory layout written by :func:`train_run`::

    params.json / params.bin   checkpoint (see kesconv.params)
    vocab.txt                  vocabulary the checkpoint was trained with
    run.json                   {"config", "seed", "version", fingerprints, ...}
    loss.csv                   step,lr,loss
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, from_dict
from .data import RawExample, extract_examples, load_dialogues
from .errors import ConfigError, DataError
from .lm import init_backbone
from .metrics import evaluate as evaluate_metrics
from .params import read_checkpoint, save_checkpoint
from .prompts import KESConv, context_token_ids, truncate_knowledge
from .retriever import (EXTERNAL, ExternalEmbedder, KnowledgeIndex, MeanPooledEmbedder, build_index, load_kb,
                        top1)
from .trainer import TrainExample, generate, train, write_loss_trace
from .vocab import EOS_ID, Vocab, detokenize, tokenize

log = logging.getLogger(__name__)

VERSION_STRING = f"v{__version__}"


def build_vocab(dialogues, kb, max_size=2000):
    texts = [t.text for d in dialogues for t in d.turns]
    texts += [e.question for e in kb] + [e.answer for e in kb]
    return Vocab.build(texts, max_size=max_size)


def backbone_embeddings(cfg, vocab):
    """Token-embedding table of the seed-determined backbone (identical for RGD/CPE/KPE)."""
    return init_backbone(cfg.lm_config(len(vocab)), np.random.default_rng(cfg.seed))["wte"]


def make_embedder(cfg, vocab):
    """Retrieval embedder; mean pooling reads the untouched initial embedding table.

    In the prompt modes that table is exactly the frozen decoder's. The concat
    baseline trains its decoder, so the initial copy keeps retrieval frozen.
    """
    if cfg.embed_mode == EXTERNAL:
        return ExternalEmbedder.load(cfg.external_embeddings)
    return MeanPooledEmbedder(backbone_embeddings(cfg, vocab), vocab)


def index_kb(cfg, vocab, kb, out_dir=None):
    index = build_index(kb, make_embedder(cfg, vocab))
    if out_dir:
        index.save(out_dir)
    return index


def new_model(cfg, vocab):
    return KESConv.initialize(cfg.lm_config(len(vocab)), seed=cfg.seed, d_knowledge=cfg.knowledge_prompts,
                              d_context=cfg.context_prompts, knowledge_max_tokens=cfg.knowledge_max_tokens)


def check_index(index, embedder):
    if index.embed_mode != embedder.mode or index.fingerprint != embedder.fingerprint():
        raise DataError("index was built with a different vocabulary or embedding table than this model; "
                        "rebuild it with the same vocab, config and seed")


@dataclass
class Prepared:
    example: TrainExample
    dialogue_id: str
    reference: str | None
    knowledge_text: str


def prepare(cfg, vocab, raw_examples, index, embedder):
    """Tokenize and attach the (precomputed) top-1 knowledge to each context."""
    out = []
    for raw in raw_examples:
        entry, score = top1(index, embedder, raw.context, key=raw.id)
        ctx = context_token_ids([tokenize(u, vocab).ids for u in raw.context], cfg.context_max_tokens)
        response = tokenize(raw.response, vocab).ids + [EOS_ID] if raw.response is not None else [EOS_ID]
        ex = TrainExample(raw.id, ctx, truncate_knowledge(tokenize(entry.answer, vocab).ids, cfg.knowledge_max_tokens),
                          response, knowledge_id=entry.id, retrieval_score=score)
        out.append(Prepared(ex, raw.dialogue_id, raw.response, entry.answer))
    return out


def train_model(cfg, vocab, dialogues, index, progress=None):
    model = new_model(cfg, vocab)
    embedder = make_embedder(cfg, vocab)
    check_index(index, embedder)
    prepared = prepare(cfg, vocab, extract_examples(dialogues), index, embedder)
    result = train(model, [p.example for p in prepared], cfg.train_config(), progress=progress)
    return model, result


def save_run(out_dir, cfg, vocab, model, result, index):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model.store, out_dir)
    vocab.save(out_dir / "vocab.txt")
    write_loss_trace(out_dir / "loss.csv", result.trace)
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "version": VERSION_STRING,
        "vocab_fingerprint": vocab.fingerprint(),
        "index_fingerprint": index.fingerprint,
        "rgd_digest": model.store.digest("rgd."),
    }
    (out_dir / "run.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def train_run(cfg, out_dir, progress=None):
    dialogues = load_dialogues(_need(cfg.dialogues, "dialogues"))
    vocab = Vocab.load(_need(cfg.vocab, "vocab"))
    index = KnowledgeIndex.load(_need(cfg.index, "index"))
    model, result = train_model(cfg, vocab, dialogues, index, progress=progress)
    save_run(out_dir, cfg, vocab, model, result, index)
    return model, result


def load_run(run_dir):
    """``(cfg, vocab, model)`` restored from a run directory."""
    run_dir = Path(run_dir)
    try:
        manifest = json.loads((run_dir / "run.json").read_text())
    except FileNotFoundError as exc:
        raise DataError(f"{run_dir} is not a run directory (run.json missing)") from exc
    cfg = from_dict(manifest["config"])
    vocab = Vocab.load(run_dir / "vocab.txt")
    model = new_model(cfg, vocab)
    state, frozen = read_checkpoint(run_dir)
    if set(state) != set(model.store):
        raise DataError("checkpoint parameters do not match the configured model")
    model.store.load_state(state)
    for name in model.store:
        if name in frozen:
            model.store.freeze(name)
        else:
            model.store.unfreeze(name)
    return cfg, vocab, model


def generation_contexts(dialogues):
    """Every supporter turn with history (with its reference), plus open seeker-final dialogues."""
    out = []
    for d in dialogues:
        found = extract_examples([d], require=False)
        if d.turns[-1].speaker == "seeker":
            found.append(RawExample(f"{d.id}#{len(d.turns)}", d.id, tuple(t.text for t in d.turns), None))
        found = [r for r in found if any(u.strip() for u in r.context)]
        if not found:
            log.warning("dialogue %s has no usable context; skipped", d.id)
        out.extend(found)
    return out


def generate_rows(cfg, vocab, model, dialogues, index):
    embedder = make_embedder(cfg, vocab)
    check_index(index, embedder)
    rows = []
    for item in prepare(cfg, vocab, generation_contexts(dialogues), index, embedder):
        ex = item.example
        ids = generate(model, ex, mode=cfg.mode, max_new=cfg.max_new_tokens)
        rows.append({
            "dialogue_id": item.dialogue_id,
            "example_id": ex.id,
            "retrieved_id": ex.knowledge_id,
            "retrieval_score": ex.retrieval_score,
            "response_text": detokenize(ids, vocab),
            "reference_text": item.reference,
            "knowledge_text": item.knowledge_text,
        })
    return rows


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def generate_run(run_dir, dialogues_path, index_dir, out_path, vocab_path=None):
    cfg, vocab, model = load_run(run_dir)
    if vocab_path is not None and Vocab.load(vocab_path).fingerprint() != vocab.fingerprint():
        raise DataError(f"vocabulary {vocab_path} does not match the checkpoint's vocabulary")
    rows = generate_rows(cfg, vocab, model, load_dialogues(dialogues_path), KnowledgeIndex.load(index_dir))
    write_jsonl(out_path, rows)
    return rows


def evaluate_rows(rows, vocab, table):
    rows = [r for r in rows if r.get("reference_text") is not None]
    if not rows:
        raise DataError("no generations with a reference to evaluate")
    cand = [tokenize(r["response_text"], vocab).ids for r in rows]
    ref = [tokenize(r["reference_text"], vocab).ids for r in rows]
    know = [tokenize(r["knowledge_text"], vocab).ids for r in rows]
    return evaluate_metrics(cand, ref, know, table)


def evaluate_run(generations_path, run_dir):
    cfg, vocab, _ = load_run(run_dir)
    return evaluate_rows(read_jsonl(generations_path), vocab, backbone_embeddings(cfg, vocab))


# ---------------------------------------------------------------- sweep

SWEEP_COLUMNS = ("axis", "size", "knowledge_prompts", "context_prompts", "bleu1", "dist1", "dist2", "dist3",
                 "rouge_l", "status")


def sweep(cfg, axis, values, train_dialogues, eval_dialogues, vocab, index, out_dir=None):
    """Train and evaluate one run per prompt size on ``axis``; failures are recorded, not raised."""
    if axis not in ("knowledge", "context"):
        raise ConfigError(f"axis must be knowledge or context, got {axis!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    for size in values:
        sizes = {"knowledge_prompts": size, "context_prompts": 10} if axis == "knowledge" \
            else {"knowledge_prompts": 5, "context_prompts": size}
        row = {"axis": axis, "size": size, **sizes}
        try:
            run_cfg = cfg.replace(**sizes)
            model, _ = train_model(run_cfg, vocab, train_dialogues, index)
            report = evaluate_rows(generate_rows(run_cfg, vocab, model, eval_dialogues, index), vocab,
                                   backbone_embeddings(run_cfg, vocab))
            row.update({k: getattr(report, k) for k in ("bleu1", "dist1", "dist2", "dist3", "rouge_l")})
            row["status"] = "ok" if all(math.isfinite(row[k]) for k in ("bleu1", "dist1", "rouge_l")) else "nonfinite"
        except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
            log.warning("sweep %s=%s failed: %s", axis, size, exc)
            row.update({k: float("nan") for k in ("bleu1", "dist1", "dist2", "dist3", "rouge_l")})
            row["status"] = f"failed: {exc}"
        rows.append(row)
    if out_dir is not None:
        write_sweep(out_dir, rows)
    return rows


def sweep_table(rows):
    head = f"{'axis':<10} {'size':>4} {'(d,d_ctx)':>9} {'BLEU-1':>7} {'DIST-1':>7} {'DIST-2':>7} {'DIST-3':>7} " \
           f"{'ROUGE-L':>7}  status"
    lines = [head, "-" * len(head)]
    for r in rows:
        pair = f"({r['knowledge_prompts']},{r['context_prompts']})"
        lines.append(f"{r['axis']:<10} {r['size']:>4} {pair:>9} {r['bleu1']:>7.4f} {r['dist1']:>7.4f} "
                     f"{r['dist2']:>7.4f} {r['dist3']:>7.4f} {r['rouge_l']:>7.4f}  {r['status']}")
    return "\n".join(lines)


def write_sweep(out_dir, rows):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in SWEEP_COLUMNS})
    (out_dir / "sweep.txt").write_text(sweep_table(rows) + "\n")
    (out_dir / "sweep.json").write_text(json.dumps(rows, indent=1) + "\n")


def _need(path, what):
    if not path:
        raise ConfigError(f"no {what} path configured")
    return path


__all__ = ["RunConfig", "build_vocab", "index_kb", "load_kb", "train_run", "generate_run", "evaluate_run", "sweep"]
