"""Query templates: ``xx`` is the edited node, ``yy`` its replacement."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .similarity import _read_resource

KIND_PREFIX = {"ins": "insert", "del": "delete", "sub": "substitute"}


@dataclass(frozen=True)
class Template:
    pattern: str
    kind: str

    def __post_init__(self):
        if self.kind not in KIND_PREFIX.values():
            raise ValueError(f"unknown template kind {self.kind!r}")
        tokens = self.pattern.split()
        if "xx" not in tokens:
            raise ValueError(f"template {self.pattern!r} lacks the xx placeholder")
        if (self.kind == "substitute") != ("yy" in tokens):
            raise ValueError(f"template {self.pattern!r}: yy is required exactly for substitutions")

    def render(self, xx: str, yy: str | None = None) -> str:
        out = []
        for tok in self.pattern.split():
            out.append(xx if tok == "xx" else yy if tok == "yy" else tok)
        return " ".join(out)


def parse_templates(text: str) -> dict[str, list[Template]]:
    out: dict[str, list[Template]] = {k: [] for k in KIND_PREFIX.values()}
    for line in text.splitlines():
        if not line.strip():
            continue
        prefix, sep, pattern = line.partition(":")
        if not sep or prefix not in KIND_PREFIX:
            raise ValueError(f"bad template line {line!r}")
        kind = KIND_PREFIX[prefix]
        out[kind].append(Template(pattern.strip(), kind))
    return out


def load_templates(path=None) -> dict[str, list[Template]]:
    text = Path(path).read_text(encoding="utf-8") if path else _read_resource("templates.txt")
    return parse_templates(text)
