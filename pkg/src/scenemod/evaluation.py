"""Node/edge precision-recall-F1, strict graph accuracy and the Copy Source baseline."""
from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .graph import SceneGraph, isomorphic
from .vocab import tokenize

BINS = ("1-2", "3-4", "5+")
# below this fraction of known source labels / query words the data is judged
# to come from a different vocabulary than the model's
MIN_COVERAGE = 0.5


class LengthMismatch(ValueError):
    pass


class VocabMismatch(ValueError):
    pass


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def prf(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def _multiset_counts(pred: Counter, gold: Counter) -> Counts:
    tp = sum((pred & gold).values())
    return Counts(tp, sum(pred.values()) - tp, sum(gold.values()) - tp)


def node_labels(g: SceneGraph | None) -> Counter:
    return Counter(g.nodes) if g is not None else Counter()


def edge_triplets(g: SceneGraph | None) -> Counter:
    if g is None:
        return Counter()
    return Counter((g.nodes[s], l, g.nodes[d]) for s, d, l in g.edges)


def node_prf(pred: SceneGraph | None, gold: SceneGraph) -> Counts:
    """Multiset overlap of node labels; ``None`` counts as an empty prediction."""
    return _multiset_counts(node_labels(pred), node_labels(gold))


def edge_prf(pred: SceneGraph | None, gold: SceneGraph) -> Counts:
    """Multiset overlap of (source label, edge label, target label) triplets."""
    return _multiset_counts(edge_triplets(pred), edge_triplets(gold))


def graph_accuracy(preds: Sequence[SceneGraph | None], golds: Sequence[SceneGraph]) -> float:
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions for {len(golds)} gold graphs")
    if not golds:
        return 0.0
    hits = sum(p is not None and isomorphic(p, g) for p, g in zip(preds, golds))
    return hits / len(golds)


def op_bin(n_ops: int) -> str | None:
    if n_ops <= 0:
        return None
    return BINS[min((n_ops - 1) // 2, 2)]


@dataclass
class MetricsReport:
    node: dict
    edge: dict
    graph_accuracy: float | None
    count: int
    bins: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def table(self, name: str = "model") -> str:
        """Plain-text row with edge, node and graph-level columns (percent)."""
        pct = lambda x: "-" if x is None else f"{100 * x:.2f}"
        head = "Method\tEdge P\tEdge R\tEdge F1\tNode P\tNode R\tNode F1\tGraph Acc"
        row = [name] + [pct(self.edge[k]) for k in ("precision", "recall", "f1")] \
            + [pct(self.node[k]) for k in ("precision", "recall", "f1")] + [pct(self.graph_accuracy)]
        lines = [head, "\t".join(row)]
        if self.bins:
            lines.append("Ops\tCount\tGraph Acc")
            for b in BINS:
                info = self.bins.get(b)
                if info:
                    lines.append(f"{b}\t{info['count']}\t{pct(info['graph_accuracy'])}")
        return "\n".join(lines)


def score(preds: Sequence[SceneGraph | None], instances: Sequence, with_graph_accuracy: bool = True,
          with_bins: bool = True) -> MetricsReport:
    """Corpus-level micro P/R/F1 plus strict accuracy, optionally split by edit count."""
    if len(preds) != len(instances):
        raise LengthMismatch(f"{len(preds)} predictions for {len(instances)} instances")
    golds = [inst.target for inst in instances]
    nc = sum((node_prf(p, g) for p, g in zip(preds, golds)), Counts())
    ec = sum((edge_prf(p, g) for p, g in zip(preds, golds)), Counts())
    acc = graph_accuracy(preds, golds) if with_graph_accuracy else None
    bins = {}
    if with_bins:
        groups: dict[str, list[int]] = {}
        for k, inst in enumerate(instances):
            b = op_bin(len(inst.ops))
            if b is not None:
                groups.setdefault(b, []).append(k)
        for b in BINS:
            idx = groups.get(b, [])
            if not idx:
                continue
            sub_p = [preds[k] for k in idx]
            sub_g = [golds[k] for k in idx]
            bins[b] = {
                "count": len(idx),
                "graph_accuracy": graph_accuracy(sub_p, sub_g) if with_graph_accuracy else None,
                "node_f1": sum((node_prf(p, g) for p, g in zip(sub_p, sub_g)), Counts()).f1,
                "edge_f1": sum((edge_prf(p, g) for p, g in zip(sub_p, sub_g)), Counts()).f1,
            }
    return MetricsReport(nc.prf(), ec.prf(), acc, len(instances), bins)


def copy_source(instances: Sequence) -> MetricsReport:
    """Baseline that predicts the source graph unchanged; graph accuracy is not reported."""
    return score([inst.source for inst in instances], instances, with_graph_accuracy=False)


def check_vocabulary(model, instances: Sequence, min_coverage: float = MIN_COVERAGE) -> None:
    labels = [l for inst in instances for l in inst.source.nodes]
    words = [w for inst in instances for w in tokenize(inst.query)]
    for name, items, vocab in (("node label", labels, model.node_vocab), ("query word", words, model.query_vocab)):
        if items:
            known = sum(t in vocab for t in items) / len(items)
            if known < min_coverage:
                raise VocabMismatch(f"only {known:.0%} of {name}s are in the model vocabulary")


def predict(model, instances: Sequence, batch_size: int = 64, jobs: int = 1) -> list[SceneGraph | None]:
    """Greedy predictions in input order; ``jobs > 1`` splits batches across processes."""
    chunks = [list(instances[i:i + batch_size]) for i in range(0, len(instances), batch_size)]
    if jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(jobs) as ex:
            parts = list(ex.map(model.generate_batch, chunks))
    else:
        parts = [model.generate_batch(c) for c in chunks]
    return [g for part in parts for g in part]


def evaluate(model, instances: Sequence, batch_size: int = 64, jobs: int = 1, check_vocab: bool = True):
    """Greedy decoding on every instance; returns ``(report, predictions)``."""
    if check_vocab:
        check_vocabulary(model, instances)
    preds = predict(model, instances, batch_size, jobs)
    return score(preds, instances), preds
