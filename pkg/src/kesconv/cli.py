"""Command-line entry point: ``kesconv <verb> [options]``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import load_config
from .data import load_dialogues, synth_corpus
from .errors import ConfigError, DataError, LengthError, NumericalError
from .retriever import KnowledgeIndex, load_kb
from .vocab import Vocab

log = logging.getLogger("kesconv")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _config(args, **extra):
    return load_config(args.config, seed=args.seed, **extra)


def cmd_synth(args):
    out = Path(args.out or ".")
    dialogues, kb, _ = synth_corpus(args.seed if args.seed is not None else 0, args.n_dialogues, args.kb_size, out)
    log.info("wrote %d dialogues and %d KB entries to %s", len(dialogues), len(kb), out)


def cmd_build_vocab(args):
    cfg = _config(args, dialogues=args.dialogues, kb=args.kb, max_vocab=args.max_vocab)
    vocab = pipeline.build_vocab(load_dialogues(cfg.dialogues), load_kb(cfg.kb), cfg.max_vocab)
    vocab.save(args.out or "vocab.txt")
    log.info("vocabulary of %d tokens written to %s", len(vocab), args.out or "vocab.txt")


def cmd_index(args):
    cfg = _config(args, kb=args.kb, vocab=args.vocab)
    index = pipeline.index_kb(cfg, Vocab.load(cfg.vocab), load_kb(cfg.kb), args.out or "index")
    log.info("indexed %d entries (dim %d, %s)", len(index), index.dim, index.embed_mode)


def cmd_train(args):
    cfg = _config(args, dialogues=args.dialogues, vocab=args.vocab, index=args.index, mode=args.mode,
                  total_steps=args.total_steps, lr=args.lr, warmup_steps=args.warmup_steps)
    _, result = pipeline.train_run(cfg, args.out or "run")
    log.info("trained %d steps; final batch loss %.4f", len(result.trace), result.trace[-1][2])


def cmd_generate(args):
    rows = pipeline.generate_run(args.checkpoint, args.dialogues, args.index, args.out or "generations.jsonl",
                                 vocab_path=args.vocab)
    log.info("wrote %d generations", len(rows))


def cmd_evaluate(args):
    report = pipeline.evaluate_run(args.generations, args.checkpoint)
    out = Path(args.out or "report.json")
    out.write_text(report.to_json() + "\n")
    out.with_suffix(".txt").write_text(report.to_table() + "\n")
    print(report.to_table())


def cmd_sweep(args):
    cfg = _config(args, dialogues=args.dialogues, vocab=args.vocab, index=args.index,
                  total_steps=args.total_steps, lr=args.lr, warmup_steps=args.warmup_steps)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--values must be comma-separated integers: {args.values!r}") from exc
    train_dialogues = load_dialogues(cfg.dialogues)
    eval_dialogues = load_dialogues(args.eval_dialogues) if args.eval_dialogues else train_dialogues
    rows = pipeline.sweep(cfg, args.axis, values, train_dialogues, eval_dialogues, Vocab.load(cfg.vocab),
                          KnowledgeIndex.load(cfg.index), out_dir=args.out or "sweep")
    print(pipeline.sweep_table(rows))


def build_parser():
    parser = argparse.ArgumentParser(prog="kesconv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def verb(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON or key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.set_defaults(func=func)
        return p

    p = verb("synth", cmd_synth, "write a synthetic dialogue corpus and knowledge base")
    p.add_argument("--n-dialogues", type=int, default=200)
    p.add_argument("--kb-size", type=int, default=50)

    p = verb("build-vocab", cmd_build_vocab, "build a vocabulary from dialogues and KB")
    p.add_argument("--dialogues")
    p.add_argument("--kb")
    p.add_argument("--max-vocab", type=int)

    p = verb("index", cmd_index, "embed KB questions into a retrieval index")
    p.add_argument("--kb")
    p.add_argument("--vocab")

    for name, func, help_ in (("train", cmd_train, "train the prompt encoders"),
                              ("sweep", cmd_sweep, "prompt-size sweep (train + evaluate per size)")):
        p = verb(name, func, help_)
        p.add_argument("--dialogues")
        p.add_argument("--vocab")
        p.add_argument("--index")
        p.add_argument("--total-steps", type=int)
        p.add_argument("--warmup-steps", type=int)
        p.add_argument("--lr", type=float)
        if name == "train":
            p.add_argument("--mode", choices=("kesconv", "concat_baseline", "no_knowledge"))
        else:
            p.add_argument("--axis", choices=("knowledge", "context"), required=True)
            p.add_argument("--values", default="1,5,10,15,20")
            p.add_argument("--eval-dialogues")

    p = verb("generate", cmd_generate, "decode responses with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dialogues", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--vocab", help="optional; must match the checkpoint's vocabulary")

    p = verb("evaluate", cmd_evaluate, "score generations (BLEU, DIST, ROUGE-L, knowledge affinity)")
    p.add_argument("--generations", required=True)
    p.add_argument("--checkpoint", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (DataError, LengthError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
