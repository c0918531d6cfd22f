"""(source graph, query, target graph) triplets built from one scene graph."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..graph import EditOp, SceneGraph, apply_edit, insert_op_for, weakly_connected
from .similarity import NoSimilarLabel, SimilarityTable
from .templates import Template

QUERY_SEPARATOR = " ; "
ACTIONS = ("insert", "delete", "substitute")


class TooSmall(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    """Multi-operation sampling: ``P`` weighs *terminate*, ``tau`` is the temperature."""

    P: float = 1.0
    tau: float = 1.0
    max_nodes: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.P > 0 or not self.tau > 0:
            raise ValueError("P and tau must be positive")


@dataclass(frozen=True)
class ModificationInstance:
    source: SceneGraph
    query: str
    target: SceneGraph
    ops: tuple = ()

    @property
    def op_kinds(self) -> list[str]:
        return [op.kind for op in self.ops]

    def to_dict(self) -> dict:
        return {
            "source": self.source.to_dict(),
            "query": self.query,
            "target": self.target.to_dict(),
            "ops": self.op_kinds,
            "edits": [[op.kind, op.node_label, op.replacement_label, [list(a) for a in op.attach_edges]]
                      for op in self.ops],
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ModificationInstance":
        if "edits" in obj:
            ops = tuple(EditOp(e[0], e[1], e[2], tuple(tuple(a) for a in (e[3] if len(e) > 3 else ())))
                        for e in obj["edits"])
        else:
            ops = tuple(EditOp(k, "", "" if k == "substitute" else None) for k in obj.get("ops", []))
        return cls(SceneGraph.from_dict(obj["source"]), obj["query"], SceneGraph.from_dict(obj["target"]), ops)


def dumps_instance(inst: ModificationInstance) -> str:
    return json.dumps(inst.to_dict(), ensure_ascii=False)


def write_jsonl(instances: Iterable[ModificationInstance], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(dumps_instance(inst) + "\n")


def read_jsonl(path) -> list[ModificationInstance]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ModificationInstance.from_dict(json.loads(line)) for line in lines if line.strip()]


def _pick(rng: np.random.Generator, seq: Sequence):
    return seq[int(rng.integers(len(seq)))]


def gen_delete(G: SceneGraph, templates: Mapping[str, Sequence[Template]], rng, node: int | None = None):
    if len(G) < 2:
        raise TooSmall("deletion needs at least 2 nodes")
    i = int(rng.integers(len(G))) if node is None else node
    tpl = _pick(rng, templates["delete"])
    op = EditOp("delete", G.nodes[i])
    return ModificationInstance(G, tpl.render(G.nodes[i]), apply_edit(G, op, i), (op,))


def gen_insert(G: SceneGraph, templates: Mapping[str, Sequence[Template]], rng, node: int | None = None):
    """Insertion is deletion run backwards: the source lacks one node of ``G``."""
    if len(G) < 2:
        raise TooSmall("insertion needs at least 2 nodes")
    i = int(rng.integers(len(G))) if node is None else node
    tpl = _pick(rng, templates["insert"])
    return ModificationInstance(G.remove_node(i), tpl.render(G.nodes[i]), G, (insert_op_for(G, i),))


def gen_substitute(G: SceneGraph, sim: SimilarityTable, templates: Mapping[str, Sequence[Template]], rng):
    for i in rng.permutation(len(G)):
        i = int(i)
        old = G.nodes[i]
        candidates = [l for l in sim.similar(old) if l not in G.nodes]
        if not candidates:
            continue
        new = _pick(rng, candidates)
        tpl = _pick(rng, templates["substitute"])
        op = EditOp("substitute", old, new)
        return ModificationInstance(G, tpl.render(old, new), apply_edit(G, op, i), (op,))
    raise NoSimilarLabel("no node of the graph has a substitution candidate")


def gen_single(G, kinds: Sequence[str], templates, sim, rng) -> ModificationInstance:
    """One uniformly chosen operation out of ``kinds``."""
    kind = _pick(rng, list(kinds))
    if kind == "delete":
        return gen_delete(G, templates, rng)
    if kind == "insert":
        return gen_insert(G, templates, rng)
    return gen_substitute(G, sim, templates, rng)


def action_distribution(P: float, tau: float, total: int, avail: int) -> np.ndarray:
    """Probabilities of (terminate, ins, del, sub) at one step of the loop."""
    w = np.array([P, 1.0, 1.0, 1.0])
    z = w ** ((total - avail) / (total * tau))
    e = np.exp(z - z.max())
    return e / e.sum()


def gen_multi(G: SceneGraph, cfg: GenConfig, templates, sim: SimilarityTable, rng,
              trace: list | None = None) -> ModificationInstance:
    """Chain of edits on one graph; no node is edited twice.

    Nodes are tracked by their id in ``G``: ``ins`` removes one more untouched
    node from the source, ``del`` removes one from the target, ``sub``
    relabels one in the target.  Infeasible actions are dropped from the
    distribution before sampling.  If ``trace`` is given, the set of node ids
    already modified is appended to it before each edit.
    """
    if len(G) < 2:
        raise TooSmall("multi-operation editing needs at least 2 nodes")
    src = list(range(len(G)))
    tgt = list(range(len(G)))
    labels = list(G.nodes)
    modified: set[int] = set()
    queries: list[str] = []
    ops: list[EditOp] = []

    def feasible(kind):
        avail = [u for u in tgt if u not in modified]
        if kind == "insert":
            return avail if len(src) >= 2 else []
        if kind == "delete":
            return avail if len(tgt) >= 2 else []
        present = {labels[u] for u in tgt} | set(G.nodes)
        return [u for u in avail if any(l not in present for l in sim.similar(labels[u]))]

    def execute(kind, u):
        if trace is not None:
            trace.append((kind, u, frozenset(modified)))
        if kind == "insert":
            src.remove(u)
            queries.append(_pick(rng, templates["insert"]).render(labels[u]))
            ops.append(EditOp("insert", labels[u]))
        elif kind == "delete":
            tgt.remove(u)
            queries.append(_pick(rng, templates["delete"]).render(labels[u]))
            ops.append(EditOp("delete", labels[u]))
        else:
            present = {labels[v] for v in tgt} | set(G.nodes)
            new = _pick(rng, [l for l in sim.similar(labels[u]) if l not in present])
            queries.append(_pick(rng, templates["substitute"]).render(labels[u], new))
            ops.append(EditOp("substitute", labels[u], new))
            labels[u] = new
        modified.add(u)

    first = [k for k in ACTIONS if feasible(k)]
    kind = _pick(rng, first)
    execute(kind, _pick(rng, feasible(kind)))

    while True:
        total = len(tgt)
        avail = sum(1 for u in tgt if u not in modified)
        if avail == 0:
            break
        probs = action_distribution(cfg.P, cfg.tau, total, avail)
        cands = {k: feasible(k) for k in ACTIONS}
        ok = np.array([True] + [bool(cands[k]) for k in ACTIONS])
        probs = np.where(ok, probs, 0.0)
        a = int(rng.choice(4, p=probs / probs.sum()))
        if a == 0:
            break
        kind = ACTIONS[a - 1]
        execute(kind, _pick(rng, cands[kind]))

    source = G.subgraph(src)
    target = SceneGraph(tuple(labels[u] for u in tgt), G.subgraph(tgt).edges)
    return ModificationInstance(source, QUERY_SEPARATOR.join(queries), target, tuple(ops))


def filter_instance(inst: ModificationInstance, max_nodes: int = 5) -> bool:
    """Dataset admissibility: both graphs connected with 1..max_nodes nodes, query nonempty."""
    for g in (inst.source, inst.target):
        if not 1 <= len(g) <= max_nodes or not weakly_connected(g):
            return False
    return bool(inst.query.strip())
