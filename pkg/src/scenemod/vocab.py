"""Token/label vocabularies with fixed special ids."""
from __future__ import annotations

import hashlib
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK, BOS, EOS, CLS, NULL = 0, 1, 2, 3, 4, 5
SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>", "<cls>")
EDGE_SPECIALS = SPECIALS + ("<null>",)


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class Vocabulary:
    """Bijective token <-> id map; specials occupy the lowest ids."""

    def __init__(self, tokens: Sequence[str], edge: bool = False):
        specials = EDGE_SPECIALS if edge else SPECIALS
        if tuple(tokens[: len(specials)]) != specials:
            raise ValueError("vocabulary must start with its special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.edge = edge
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, corpus: Iterable[str], min_count: int = 1, edge: bool = False) -> "Vocabulary":
        """Ids by descending frequency, ties broken lexicographically."""
        if min_count < 1:
            raise ValueError("min_count must be >= 1")
        specials = EDGE_SPECIALS if edge else SPECIALS
        counts = Counter(t for t in corpus if t not in specials)
        kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls(list(specials) + kept, edge=edge)

    @property
    def n_special(self) -> int:
        return len(EDGE_SPECIALS if self.edge else SPECIALS)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.edge == other.edge and self.itos == other.itos

    def id_of(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def ids_of(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def token(self, i: int) -> str:
        return self.itos[i]

    def encode(self, text: str) -> list[int]:
        return self.ids_of(tokenize(text))

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.itos[i] for i in ids)

    def fingerprint(self) -> bytes:
        h = hashlib.sha256(b"edge" if self.edge else b"node")
        for t in self.itos:
            h.update(t.encode("utf-8") + b"\n")
        return h.digest()

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path, edge: bool | None = None) -> "Vocabulary":
        tokens = Path(path).read_text(encoding="utf-8").split("\n")[:-1]
        if edge is None:
            edge = len(tokens) > len(SPECIALS) and tokens[len(SPECIALS)] == EDGE_SPECIALS[-1]
        return cls(tokens, edge=edge)
