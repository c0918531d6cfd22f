"""Random scene graphs and brute-force references shared by the tests."""
import itertools

import numpy as np
from hypothesis import strategies as st

from scenemod.graph import SceneGraph

LABELS = ("man", "dog", "shirt", "red", "tree", "young")
EDGE_LABELS = ("on", "in", "attribute", "holding")


def random_dag(rng: np.random.Generator, max_nodes: int = 6, labels=LABELS, edge_p: float = 0.4,
               min_nodes: int = 1) -> SceneGraph:
    """Edges always point from a lower to a higher id of a hidden order, then ids are shuffled."""
    n = int(rng.integers(min_nodes, max_nodes + 1))
    nodes = [labels[int(rng.integers(len(labels)))] for _ in range(n)]
    edges = [(i, j, EDGE_LABELS[int(rng.integers(len(EDGE_LABELS)))])
             for i in range(n) for j in range(i + 1, n) if rng.random() < edge_p]
    perm = rng.permutation(n)
    return SceneGraph(tuple(nodes[int(k)] for k in np.argsort(perm)),
                      frozenset((int(perm[s]), int(perm[d]), l) for s, d, l in edges))


@st.composite
def dags(draw, max_nodes=6, labels=LABELS, min_nodes=1):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    return random_dag(np.random.Generator(np.random.PCG64(seed)), max_nodes, labels, min_nodes=min_nodes)


def shuffled(g: SceneGraph, rng) -> SceneGraph:
    return g.permuted([int(i) for i in rng.permutation(len(g))])


def brute_prf(pred_items, gold_items):
    """tp by exhaustive matching of pred items to gold items (max-cardinality)."""
    pred, gold = list(pred_items), list(gold_items)
    small, large = sorted((pred, gold), key=len)
    best = 0
    # every injective assignment of the shorter list into the longer one
    for perm in itertools.permutations(range(len(large)), len(small)):
        best = max(best, sum(small[i] == large[j] for i, j in enumerate(perm)))
    return best, len(pred) - best, len(gold) - best
