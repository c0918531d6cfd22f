"""Caption-like scene graphs for desk-scale experiments.

Stands in for parser output over image captions: one or two salient objects
with attributes and relations, 2-5 nodes, always weakly connected and
acyclic.  Object and attribute labels come from the similarity groups, so
every label has substitution candidates.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..graph import SceneGraph
from .similarity import load_groups

ATTRIBUTE_EDGE = "attribute"

# attribute group -> object groups it can describe
ATTRIBUTES = {
    "color": ("person", "athlete", "animal", "vehicle", "furniture", "clothing", "container",
              "sports", "device", "structure"),
    "size": ("animal", "vehicle", "furniture", "clothing", "food", "container", "sports", "device",
             "place", "structure"),
    "age": ("person", "athlete", "animal"),
    "material": ("furniture", "container", "structure"),
    "mood": ("person", "athlete"),
    "animalstate": ("animal",),
    "foodstate": ("food",),
    "placestate": ("place",),
    "vehiclestate": ("vehicle",),
}

_PEOPLE = ("person", "athlete")
_SMALL_THINGS = ("food", "container", "device", "sports")

# (subject groups, object groups, relation labels)
RELATIONS = [
    (_PEOPLE, ("clothing",), ("wearing", "in")),
    (_PEOPLE, ("vehicle",), ("riding", "in", "near")),
    (_PEOPLE, ("animal",), ("riding", "with", "feeding")),
    (_PEOPLE, ("food",), ("eating", "holding")),
    (_PEOPLE, ("container", "sports", "device"), ("holding", "with", "using")),
    (_PEOPLE, ("furniture",), ("on", "at", "near")),
    (_PEOPLE, ("place", "structure"), ("in", "on", "near")),
    (("animal",), ("place",), ("in", "on")),
    (("animal",), ("food",), ("eating",)),
    (("animal",), ("furniture",), ("on", "under")),
    (("animal",), ("structure",), ("near", "behind")),
    (("vehicle",), ("place",), ("on", "in")),
    (("vehicle",), ("structure",), ("near", "behind")),
    (("food",), ("container",), ("on", "in")),
    (_SMALL_THINGS, ("furniture",), ("on", "under", "near")),
    (("furniture",), ("place",), ("in",)),
    (("structure",), ("place",), ("on", "near")),
]

MAIN_GROUPS = {
    "person": 0.30, "athlete": 0.08, "animal": 0.18, "vehicle": 0.12, "food": 0.08,
    "furniture": 0.07, "structure": 0.07, "container": 0.05, "device": 0.05,
}

# node-count distributions (2..5 nodes)
PROFILES = {
    "mscoco": {2: 0.30, 3: 0.35, 4: 0.21, 5: 0.14},  # about 2.9 source nodes per instance
    "gcc": {2: 0.08, 3: 0.27, 4: 0.33, 5: 0.32},
}


class _Lexicon:
    def __init__(self):
        self.groups = load_groups()
        self.group_of = {l: g for g, labels in self.groups.items() for l in labels}


def _sample_one(rng: np.random.Generator, n_nodes: int, lex: _Lexicon, attr_rate: float):
    mains = list(MAIN_GROUPS)
    probs = np.array([MAIN_GROUPS[g] for g in mains])
    group = mains[rng.choice(len(mains), p=probs / probs.sum())]
    nodes = [str(rng.choice(lex.groups[group]))]
    kinds = [group]
    is_object = [True]
    edges = []
    used_attr = set()
    while len(nodes) < n_nodes:
        present = set(nodes)
        objects = [i for i in range(len(nodes)) if is_object[i]]
        grown = False
        if rng.random() < attr_rate:
            options = [(i, ag) for i in objects for ag, targets in ATTRIBUTES.items()
                       if kinds[i] in targets and (i, ag) not in used_attr
                       and any(l not in present for l in lex.groups[ag])]
            if options:
                i, ag = options[rng.integers(len(options))]
                label = str(rng.choice([l for l in lex.groups[ag] if l not in present]))
                used_attr.add((i, ag))
                nodes.append(label)
                kinds.append(ag)
                is_object.append(False)
                edges.append((i, len(nodes) - 1, ATTRIBUTE_EDGE))
                grown = True
        if not grown:
            options = []
            for i in objects:
                for subj, obj, rels in RELATIONS:
                    if kinds[i] in subj:
                        options += [(i, og, rels, "out") for og in obj]
                    if kinds[i] in obj:
                        options += [(i, sg, rels, "in") for sg in subj]
            options = [o for o in options if any(l not in present for l in lex.groups[o[1]])]
            if not options:
                return None
            i, g2, rels, direction = options[rng.integers(len(options))]
            label = str(rng.choice([l for l in lex.groups[g2] if l not in present]))
            rel = str(rng.choice(rels))
            nodes.append(label)
            kinds.append(g2)
            is_object.append(True)
            j = len(nodes) - 1
            edges.append((i, j, rel) if direction == "out" else (j, i, rel))
    return SceneGraph(tuple(nodes), frozenset(edges))


def _key(g: SceneGraph):
    return (tuple(sorted(g.nodes)), tuple(sorted((g.nodes[s], l, g.nodes[d]) for s, d, l in g.edges)))


def sample_graphs(n: int, seed: int = 0, profile: str = "mscoco", attr_rate: float = 0.5) -> list[SceneGraph]:
    """``n`` distinct random scene graphs following a node-count ``profile``."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    sizes = sorted(PROFILES[profile])
    probs = np.array([PROFILES[profile][k] for k in sizes])
    lex = _Lexicon()
    out, seen = [], set()
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > 50 * n + 1000:
            raise RuntimeError(f"could only sample {len(out)} distinct graphs")
        size = sizes[rng.choice(len(sizes), p=probs)]
        g = _sample_one(rng, size, lex, attr_rate)
        if g is None:
            continue
        k = _key(g)
        if k in seen:
            continue
        seen.add(k)
        out.append(g)
    return out


def write_graphs(graphs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(g.to_dict()) + "\n")


def read_graphs(path) -> list[SceneGraph]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [SceneGraph.from_dict(json.loads(line)) for line in lines if line.strip()]
