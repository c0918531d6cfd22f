"""Binary checkpoint files.

Layout (all integers little-endian)::

    b"GMCK" | u32 version | 32-byte sha256 of the vocabularies
    u32 n | n bytes of UTF-8 JSON metadata (configs, vocabularies, epoch, dev metric)
    u32 count | count tensor blocks
    tensor block: u32 name length | name | u8 dtype code | u8 ndim | u32 dims... | raw values
    32-byte sha256 of everything above
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .vocab import Vocabulary

MAGIC = b"GMCK"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CorruptCheckpoint(ValueError):
    pass


def vocab_hash(node: Vocabulary, query: Vocabulary, edge: Vocabulary) -> bytes:
    h = hashlib.sha256()
    for v in (node, query, edge):
        h.update(v.fingerprint())
    return h.digest()


@dataclass
class Checkpoint:
    model_config: dict
    params: dict[str, np.ndarray]
    node_vocab: Vocabulary
    query_vocab: Vocabulary
    edge_vocab: Vocabulary
    epoch: int = 0
    dev_metric: float | None = None
    train_config: dict = field(default_factory=dict)

    def _meta(self) -> dict:
        shared = self.query_vocab is self.node_vocab or self.query_vocab == self.node_vocab
        return {
            "model_config": self.model_config,
            "train_config": self.train_config,
            "epoch": self.epoch,
            "dev_metric": self.dev_metric,
            "vocab": {
                "node": self.node_vocab.itos,
                "query": None if shared else self.query_vocab.itos,
                "edge": self.edge_vocab.itos,
            },
        }

    def to_bytes(self) -> bytes:
        meta = json.dumps(self._meta(), sort_keys=True, ensure_ascii=False).encode("utf-8")
        parts = [MAGIC, struct.pack("<I", VERSION),
                 vocab_hash(self.node_vocab, self.query_vocab, self.edge_vocab),
                 struct.pack("<I", len(meta)), meta, struct.pack("<I", len(self.params))]
        for name, arr in self.params.items():
            arr = np.asarray(arr)
            dt = arr.dtype.newbyteorder("<")
            if dt not in _CODES:
                raise TypeError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
            raw = name.encode("utf-8")
            parts += [struct.pack("<I", len(raw)), raw, struct.pack("<BB", _CODES[dt], arr.ndim),
                      struct.pack(f"<{arr.ndim}I", *arr.shape), np.ascontiguousarray(arr, dtype=dt).tobytes()]
        body = b"".join(parts)
        return body + hashlib.sha256(body).digest()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        r = _Reader(buf)
        if r.take(4) != MAGIC:
            raise CorruptCheckpoint("bad magic bytes")
        version = r.u32()
        if version != VERSION:
            raise CorruptCheckpoint(f"unsupported checkpoint version {version}")
        digest = r.take(32)
        if len(buf) < r.pos + 32 or hashlib.sha256(buf[:-32]).digest() != bytes(buf[-32:]):
            raise CorruptCheckpoint("checksum mismatch (truncated or altered file)")
        r.buf = r.buf[:-32]
        try:
            meta = json.loads(r.take(r.u32()).decode("utf-8"))
            v = meta["vocab"]
            node = Vocabulary(v["node"])
            query = node if v["query"] is None else Vocabulary(v["query"])
            edge = Vocabulary(v["edge"], edge=True)
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise CorruptCheckpoint(f"unreadable metadata: {e}") from None
        if vocab_hash(node, query, edge) != digest:
            raise CorruptCheckpoint("vocabulary hash mismatch")
        params = {}
        for _ in range(r.u32()):
            name = r.take(r.u32()).decode("utf-8", errors="strict")
            code, ndim = struct.unpack("<BB", r.take(2))
            if code not in _DTYPES:
                raise CorruptCheckpoint(f"unknown dtype code {code}")
            shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
            dt = _DTYPES[code]
            n = int(np.prod(shape, dtype=np.int64))
            params[name] = np.frombuffer(r.take(n * dt.itemsize), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        if not r.done():
            raise CorruptCheckpoint("trailing bytes after last tensor")
        return cls(meta["model_config"], params, node, query, edge, meta["epoch"], meta["dev_metric"],
                   meta.get("train_config", {}))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise CorruptCheckpoint("truncated checkpoint")
        out = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def done(self) -> bool:
        return self.pos == len(self.buf)


def save(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(ckpt.to_bytes())


def load(path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())


def from_model(model, epoch: int = 0, dev_metric: float | None = None, train_config: dict | None = None) -> Checkpoint:
    return Checkpoint(model.config.to_dict(), {k: p.data.copy() for k, p in model.params.items()},
                      model.node_vocab, model.query_vocab, model.edge_vocab, epoch, dev_metric,
                      dict(train_config or {}))


def to_model(ckpt: Checkpoint):
    """Rebuild a :class:`GraphModifier` holding the checkpoint's exact values."""
    from .model import GraphModifier, ModelConfig

    cfg = ModelConfig(**ckpt.model_config)
    dtype = next(iter(ckpt.params.values())).dtype if ckpt.params else np.float32
    model = GraphModifier(cfg, ckpt.node_vocab, ckpt.query_vocab, ckpt.edge_vocab, dtype=dtype)
    if set(model.params) != set(ckpt.params):
        raise CorruptCheckpoint("parameter names do not match the configured architecture")
    for name, p in model.params.items():
        if p.data.shape != ckpt.params[name].shape:
            raise CorruptCheckpoint(f"shape mismatch for {name!r}")
        p.data = ckpt.params[name].copy()
    return model
