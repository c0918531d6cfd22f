"""Substitution candidates: label -> ranked list of similar labels."""
from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence


class NoSimilarLabel(LookupError):
    pass


def _read_resource(name: str) -> str:
    return resources.files(__package__).joinpath("resources", name).read_text(encoding="utf-8")


def parse_groups(text: str) -> dict[str, list[str]]:
    groups: dict[str, list[str]] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, _, labels = line.partition(":")
        groups[name.strip()] = labels.split()
    return groups


def load_groups(path=None) -> dict[str, list[str]]:
    text = Path(path).read_text(encoding="utf-8") if path else _read_resource("similarity.txt")
    return parse_groups(text)


class SimilarityTable:
    """Ranked similar labels; a label never lists itself."""

    def __init__(self, table: Mapping[str, Sequence[str]]):
        self._table = {k: [v for v in vs if v != k] for k, vs in table.items()}

    @classmethod
    def from_groups(cls, groups: Mapping[str, Sequence[str]]) -> "SimilarityTable":
        table: dict[str, list[str]] = {}
        for labels in groups.values():
            for i, label in enumerate(labels):
                # nearer group members rank first
                others = sorted((j for j in range(len(labels)) if j != i), key=lambda j: (abs(j - i), j))
                table.setdefault(label, [])
                table[label] += [labels[j] for j in others if labels[j] not in table[label]]
        return cls(table)

    @classmethod
    def default(cls) -> "SimilarityTable":
        return cls.from_groups(load_groups())

    def similar(self, label: str) -> list[str]:
        return list(self._table.get(label, ()))

    def __contains__(self, label):
        return bool(self._table.get(label))

    def labels(self) -> list[str]:
        return sorted(self._table)
