"""Named parameter store and its on-disk checkpoint format.

Checkpoint layout (see docs/formats.md for the byte-level description)::

    <dir>/params.json   manifest: [{"name", "dtype", "shape", "offset", "nbytes"}, ...]
    <dir>/params.bin    concatenated little-endian IEEE-754 payloads in manifest order
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import DataError
from .tensor import Tensor

MANIFEST_NAME = "params.json"
PAYLOAD_NAME = "params.bin"
FORMAT_VERSION = 1

_DTYPES = {"float64": "<f8", "float32": "<f4"}


class ParamStore:
    """Ordered mapping of dotted names to trainable tensors."""

    def __init__(self):
        self._entries = OrderedDict()
        self._frozen = set()

    def add(self, name, data):
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._entries[name] = t
        return t

    def __getitem__(self, name):
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self, prefix=""):
        return [n for n in self._entries if n.startswith(prefix)]

    @property
    def frozen_names(self):
        return frozenset(self._frozen)

    def freeze(self, prefix):
        """Exclude every parameter under ``prefix`` from updates.

        Frozen tensors also stop requesting gradients, which saves the
        backward pass from computing weight gradients nobody will use.
        """
        names = self.names(prefix)
        if not names:
            raise KeyError(f"no parameters under prefix {prefix!r}")
        for n in names:
            self._frozen.add(n)
            self._entries[n].requires_grad = False
            self._entries[n].grad = None

    def unfreeze(self, prefix):
        for n in self.names(prefix):
            self._frozen.discard(n)
            self._entries[n].requires_grad = True

    def is_frozen(self, name):
        return name in self._frozen

    def trainable(self):
        return [(n, t) for n, t in self._entries.items() if n not in self._frozen]

    def zero_grad(self):
        for t in self._entries.values():
            t.grad = None

    def digest(self, prefix=""):
        """SHA-256 over names, shapes and raw bytes of parameters under ``prefix``."""
        h = hashlib.sha256()
        for name, t in self._entries.items():
            if name.startswith(prefix):
                h.update(name.encode())
                h.update(repr(t.shape).encode())
                h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def state(self):
        return OrderedDict((n, t.data.copy()) for n, t in self._entries.items())

    def load_state(self, state):
        for name, arr in state.items():
            if name not in self._entries:
                raise KeyError(f"unknown parameter {name!r}")
            if self._entries[name].shape != arr.shape:
                raise DataError(f"shape mismatch for {name}: {self._entries[name].shape} vs {arr.shape}")
            self._entries[name].data = np.array(arr, dtype=self._entries[name].data.dtype)


def save_checkpoint(store, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest, offset = [], 0
    with open(directory / PAYLOAD_NAME, "wb") as fh:
        for name, t in store.items():
            dtype = t.data.dtype.name
            if dtype not in _DTYPES:
                raise DataError(f"unsupported dtype {dtype} for {name}")
            raw = np.ascontiguousarray(t.data, dtype=_DTYPES[dtype]).tobytes()
            fh.write(raw)
            manifest.append({"name": name, "dtype": dtype, "shape": list(t.shape),
                             "offset": offset, "nbytes": len(raw)})
            offset += len(raw)
    doc = {"format_version": FORMAT_VERSION, "frozen": sorted(store.frozen_names), "params": manifest}
    (directory / MANIFEST_NAME).write_text(json.dumps(doc, indent=1) + "\n")


def read_checkpoint(directory):
    """Return ``(state, frozen_names)`` from a checkpoint directory."""
    directory = Path(directory)
    try:
        doc = json.loads((directory / MANIFEST_NAME).read_text())
        payload = (directory / PAYLOAD_NAME).read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint incomplete: {exc.filename} missing") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format {doc.get('format_version')!r}")
    state = OrderedDict()
    for entry in doc["params"]:
        lo, n = entry["offset"], entry["nbytes"]
        if lo + n > len(payload):
            raise DataError(f"payload truncated at parameter {entry['name']}")
        arr = np.frombuffer(payload[lo:lo + n], dtype=_DTYPES[entry["dtype"]])
        state[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"])
    return state, set(doc.get("frozen", []))
