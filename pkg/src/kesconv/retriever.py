"""Top-1 knowledge selection by inner product over question embeddings.

Two embedders are available. ``mean_pooled_frozen`` averages rows of the
frozen decoder's token-embedding table (training-free and deterministic).
``external_file`` looks vectors up by id in a JSONL file, so precomputed
dense-retriever vectors can be plugged in.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DataError, MissingEmbeddingError
from .vocab import SEP, tokenize

MEAN_POOLED = "mean_pooled_frozen"
EXTERNAL = "external_file"
MANIFEST_NAME = "index.json"
PAYLOAD_NAME = "embeddings.bin"
KB_COPY_NAME = "kb.jsonl"


@dataclass(frozen=True)
class QAEntry:
    id: str
    question: str
    answer: str
    q_embedding: np.ndarray | None = None


def context_query_text(utterances):
    """All utterances, oldest first, joined by the separator's surface form."""
    return f" {SEP} ".join(utterances)


class MeanPooledEmbedder:
    mode = MEAN_POOLED

    def __init__(self, table, vocab):
        self.table = np.asarray(table, dtype=np.float64)
        self.vocab = vocab

    @property
    def dim(self):
        return self.table.shape[1]

    def embed(self, text, key=None):
        ids = tokenize(text, self.vocab).ids
        if not ids:
            return np.zeros(self.dim)
        return self.table[ids].mean(axis=0)

    def fingerprint(self):
        return hashlib.sha256(np.ascontiguousarray(self.table).tobytes()).hexdigest()[:16]


class ExternalEmbedder:
    """Vectors keyed by id, one JSON object ``{"id", "embedding"}`` per line."""

    mode = EXTERNAL

    def __init__(self, vectors):
        if not vectors:
            raise DataError("external embedding file is empty")
        dims = {len(v) for v in vectors.values()}
        if len(dims) != 1:
            raise DataError(f"external embeddings have mixed dimensions {sorted(dims)}")
        self.vectors = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        self._dim = dims.pop()

    @classmethod
    def load(cls, path):
        vectors = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    vectors[str(rec["id"])] = [float(x) for x in rec["embedding"]]
                except (ValueError, KeyError, TypeError) as exc:
                    raise DataError(f"bad embedding record: {exc}", line=lineno) from exc
        return cls(vectors)

    @property
    def dim(self):
        return self._dim

    def embed(self, text, key=None):
        if key is None or key not in self.vectors:
            raise MissingEmbeddingError(f"no external embedding for id {key!r}")
        return self.vectors[key]

    def fingerprint(self):
        h = hashlib.sha256()
        for k in sorted(self.vectors):
            h.update(k.encode())
            h.update(self.vectors[k].tobytes())
        return h.hexdigest()[:16]


class KnowledgeIndex:
    """Immutable list of QA entries with a dense ``[M, dim]`` question matrix."""

    def __init__(self, entries, embed_mode, fingerprint=""):
        if not entries:
            raise DataError("knowledge index is empty")
        self.entries = tuple(entries)
        self.matrix = np.stack([e.q_embedding for e in self.entries]).astype(np.float64)
        self.matrix.setflags(write=False)
        self.dim = self.matrix.shape[1]
        self.embed_mode = embed_mode
        self.fingerprint = fingerprint

    def __len__(self):
        return len(self.entries)

    def search(self, query):
        """``(entry, score)`` of the maximal inner product; lowest index wins ties."""
        i, score = kernels.top1(self.matrix, query)
        return self.entries[i], float(score)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / PAYLOAD_NAME).write_bytes(np.ascontiguousarray(self.matrix, dtype="<f8").tobytes())
        manifest = {
            "dim": self.dim,
            "embed_mode": self.embed_mode,
            "ids": [e.id for e in self.entries],
            "dtype": "float64",
            "embedder_fingerprint": self.fingerprint,
        }
        (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1) + "\n")
        with open(directory / KB_COPY_NAME, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps({"id": e.id, "question": e.question, "answer": e.answer}) + "\n")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        try:
            manifest = json.loads((directory / MANIFEST_NAME).read_text())
            payload = (directory / PAYLOAD_NAME).read_bytes()
            kb = load_kb(directory / KB_COPY_NAME)
        except FileNotFoundError as exc:
            raise DataError(f"index incomplete: {exc.filename} missing") from exc
        ids, dim = manifest["ids"], manifest["dim"]
        matrix = np.frombuffer(payload, dtype="<f8")
        if matrix.size != len(ids) * dim:
            raise DataError("index payload size does not match manifest")
        matrix = matrix.reshape(len(ids), dim)
        if [e.id for e in kb] != ids:
            raise DataError("index manifest ids do not match its KB copy")
        entries = [QAEntry(e.id, e.question, e.answer, matrix[i].copy()) for i, e in enumerate(kb)]
        return cls(entries, manifest["embed_mode"], manifest.get("embedder_fingerprint", ""))


def build_index(kb, embedder):
    """Embed every question with ``embedder``; ids must be unique."""
    kb = list(kb)
    if not kb:
        raise DataError("cannot build an index from an empty knowledge base")
    seen, dupes = set(), []
    for e in kb:
        if e.id in seen:
            dupes.append(e.id)
        seen.add(e.id)
    if dupes:
        raise DataError(f"duplicate knowledge ids: {sorted(set(dupes))}")
    entries = [QAEntry(e.id, e.question, e.answer, np.asarray(embedder.embed(e.question, key=e.id), dtype=np.float64))
               for e in kb]
    return KnowledgeIndex(entries, embedder.mode, embedder.fingerprint())


def top1(index, embedder, utterances, key=None):
    """Retrieve the best entry for a dialogue context given as utterance strings."""
    query = embedder.embed(context_query_text(utterances), key=key)
    return index.search(query)


def load_kb(path):
    """QA records, one ``{"id", "question", "answer"}`` JSON object per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise DataError(f"invalid JSON: {exc}", line=lineno) from exc
            if not isinstance(rec, dict) or not all(isinstance(rec.get(k), str) for k in ("id", "question", "answer")):
                raise DataError("record needs string fields id, question, answer", line=lineno)
            if not rec["answer"].strip():
                raise DataError(f"entry {rec['id']} has an empty answer", line=lineno)
            out.append(QAEntry(rec["id"], rec["question"], rec["answer"]))
    if not out:
        raise DataError(f"{path}: no knowledge entries")
    return out
