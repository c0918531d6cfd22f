"""Scene graphs: labelled nodes joined by directed, labelled edges."""
from __future__ import annotations

import heapq
import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class GraphError(ValueError):
    pass


class CycleError(GraphError):
    pass


class EmptyGraphError(GraphError):
    pass


class SizeLimitError(GraphError):
    pass


class NodeNotFound(GraphError):
    pass


class DuplicateEdge(GraphError):
    pass


Edge = tuple[int, int, str]


@dataclass(frozen=True)
class SceneGraph:
    """Immutable scene graph.

    ``nodes[i]`` is the label of node ``i``; ``edges`` holds
    ``(src, dst, label)`` triples.  At most one edge per ordered pair and no
    self-loops.  Acyclicity is checked lazily by :func:`topological_order`.
    """

    nodes: tuple[str, ...]
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", frozenset((int(s), int(d), str(l)) for s, d, l in self.edges))
        n = len(self.nodes)
        pairs = set()
        for s, d, _ in self.edges:
            if not (0 <= s < n and 0 <= d < n):
                raise GraphError(f"edge ({s}, {d}) has an endpoint outside 0..{n - 1}")
            if s == d:
                raise GraphError(f"self-loop on node {s}")
            if (s, d) in pairs:
                raise DuplicateEdge(f"more than one edge {s}->{d}")
            pairs.add((s, d))

    def __len__(self):
        return len(self.nodes)

    def sorted_edges(self) -> list[Edge]:
        return sorted(self.edges)

    def neighbors(self, i: int) -> set[int]:
        """Nodes joined to ``i`` by an edge in either direction."""
        out = set()
        for s, d, _ in self.edges:
            if s == i:
                out.add(d)
            elif d == i:
                out.add(s)
        return out

    def incident_labels(self, i: int) -> list[str]:
        return [l for s, d, l in self.sorted_edges() if s == i or d == i]

    def edge_label(self, src: int, dst: int) -> str | None:
        for s, d, l in self.edges:
            if s == src and d == dst:
                return l
        return None

    def relabel(self, i: int, label: str) -> "SceneGraph":
        if not 0 <= i < len(self.nodes):
            raise NodeNotFound(f"no node {i}")
        nodes = list(self.nodes)
        nodes[i] = label
        return SceneGraph(tuple(nodes), self.edges)

    def remove_node(self, i: int) -> "SceneGraph":
        """Drop node ``i`` and its incident edges; later ids shift down by one."""
        if not 0 <= i < len(self.nodes):
            raise NodeNotFound(f"no node {i}")
        nodes = self.nodes[:i] + self.nodes[i + 1:]
        edges = {(s - (s > i), d - (d > i), l) for s, d, l in self.edges if i not in (s, d)}
        return SceneGraph(nodes, frozenset(edges))

    def subgraph(self, keep: Sequence[int]) -> "SceneGraph":
        """Induced subgraph on ``keep`` (new ids follow the order of ``keep``)."""
        pos = {old: new for new, old in enumerate(keep)}
        edges = {(pos[s], pos[d], l) for s, d, l in self.edges if s in pos and d in pos}
        return SceneGraph(tuple(self.nodes[i] for i in keep), frozenset(edges))

    def permuted(self, order: Sequence[int]) -> "SceneGraph":
        """Same graph with node ``order[k]`` stored at position ``k``."""
        if sorted(order) != list(range(len(self.nodes))):
            raise GraphError("permutation must cover every node exactly once")
        return self.subgraph(order)

    def to_dict(self) -> dict:
        return {"nodes": list(self.nodes), "edges": [[s, d, l] for s, d, l in self.sorted_edges()]}

    @classmethod
    def from_dict(cls, obj: dict) -> "SceneGraph":
        return cls(tuple(obj["nodes"]), frozenset((s, d, l) for s, d, l in obj.get("edges", [])))

    @classmethod
    def from_triplets(cls, nodes: Sequence[str], triplets: Iterable[tuple[str, str, str]]) -> "SceneGraph":
        """Build from ``(src label, edge label, dst label)`` with unique node labels."""
        ids = {label: i for i, label in enumerate(nodes)}
        return cls(tuple(nodes), frozenset((ids[s], ids[d], l) for s, l, d in triplets))


def topological_order(g: SceneGraph, priority: Sequence | None = None) -> list[int]:
    """Kahn's algorithm; among ready nodes the smallest ``priority`` key wins.

    With no ``priority`` ties fall back to ascending node id.
    """
    n = len(g)
    indeg = [0] * n
    succ: list[list[int]] = [[] for _ in range(n)]
    for s, d, _ in g.edges:
        indeg[d] += 1
        succ[s].append(d)
    key = (lambda i: (priority[i], i)) if priority is not None else (lambda i: (i,))
    ready = [key(i) for i in range(n) if indeg[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        i = heapq.heappop(ready)[-1]
        order.append(i)
        for d in succ[i]:
            indeg[d] -= 1
            if indeg[d] == 0:
                heapq.heappush(ready, key(d))
    if len(order) != n:
        raise CycleError("graph has a directed cycle")
    return order


def canonical(g: SceneGraph) -> SceneGraph:
    """Same graph stored in topological order, ties broken by label then id."""
    return g.permuted(topological_order(g, g.nodes))


def is_acyclic(g: SceneGraph) -> bool:
    try:
        topological_order(g)
    except CycleError:
        return False
    return True


def weakly_connected(g: SceneGraph) -> bool:
    n = len(g)
    if n == 0:
        raise EmptyGraphError("connectivity of an empty graph is undefined")
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    components = n
    for s, d, _ in g.edges:
        rs, rd = find(s), find(d)
        if rs != rd:
            parent[rs] = rd
            components -= 1
    return components == 1


def _signature(g: SceneGraph):
    return (Counter(g.nodes), Counter((g.nodes[s], l, g.nodes[d]) for s, d, l in g.edges))


def isomorphic(g1: SceneGraph, g2: SceneGraph, max_nodes: int = 12) -> bool:
    """Label-preserving isomorphism by backtracking over candidate mappings.

    Node ``i`` of ``g1`` may map only to nodes of ``g2`` with the same label
    and the same labelled in/out degree profile; partial maps are pruned as
    soon as an edge between mapped nodes disagrees.
    """
    if len(g1) > max_nodes or len(g2) > max_nodes:
        raise SizeLimitError(f"isomorphism check capped at {max_nodes} nodes")
    if len(g1) != len(g2) or len(g1.edges) != len(g2.edges):
        return False
    if _signature(g1) != _signature(g2):
        return False
    n = len(g1)
    adj1 = {(s, d): l for s, d, l in g1.edges}
    adj2 = {(s, d): l for s, d, l in g2.edges}

    def profile(g, i):
        outs = sorted((l, g.nodes[d]) for s, d, l in g.edges if s == i)
        ins = sorted((g.nodes[s], l) for s, d, l in g.edges if d == i)
        return (g.nodes[i], tuple(outs), tuple(ins))

    prof2 = [profile(g2, j) for j in range(n)]
    candidates = [[j for j in range(n) if prof2[j] == profile(g1, i)] for i in range(n)]
    if any(not c for c in candidates):
        return False
    order = sorted(range(n), key=lambda i: len(candidates[i]))
    mapping: dict[int, int] = {}
    used = [False] * n

    def consistent(i, j):
        for k, mk in mapping.items():
            if adj1.get((i, k)) != adj2.get((j, mk)) or adj1.get((k, i)) != adj2.get((mk, j)):
                return False
        return True

    def search(depth):
        if depth == n:
            return True
        i = order[depth]
        for j in candidates[i]:
            if not used[j] and consistent(i, j):
                mapping[i] = j
                used[j] = True
                if search(depth + 1):
                    return True
                del mapping[i]
                used[j] = False
        return False

    return search(0)


def isomorphic_bruteforce(g1: SceneGraph, g2: SceneGraph) -> bool:
    """Reference check over every node bijection (small graphs only)."""
    if len(g1) != len(g2) or len(g1.edges) != len(g2.edges):
        return False
    target = {(s, d, l) for s, d, l in g2.edges}
    for perm in itertools.permutations(range(len(g2))):
        if any(g1.nodes[i] != g2.nodes[perm[i]] for i in range(len(g1))):
            continue
        if {(perm[s], perm[d], l) for s, d, l in g1.edges} == target:
            return True
    return False


@dataclass(frozen=True)
class EditOp:
    """One graph edit.

    ``attach_edges`` lists ``(neighbor, edge label, direction)`` with
    direction ``"out"`` for new->neighbor and ``"in"`` for neighbor->new; it
    only matters for inserts.  ``neighbor`` is a node label, or an int node id
    of the graph being edited when labels are ambiguous.
    """

    kind: str
    node_label: str
    replacement_label: str | None = None
    attach_edges: tuple = ()

    KINDS = ("insert", "delete", "substitute")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown edit kind {self.kind!r}")
        if (self.kind == "substitute") != (self.replacement_label is not None):
            raise ValueError("replacement_label is required for substitute and only for substitute")
        object.__setattr__(self, "attach_edges", tuple(tuple(e) for e in self.attach_edges))


def insert_op_for(g: SceneGraph, i: int) -> EditOp:
    """The insert that undoes deleting node ``i`` from ``g``.

    Neighbours are referenced by id in ``g.remove_node(i)``, so applying the
    result at position ``i`` restores ``g`` exactly.
    """
    attach = []
    for s, d, l in g.sorted_edges():
        if s == i:
            attach.append((d - (d > i), l, "out"))
        elif d == i:
            attach.append((s - (s > i), l, "in"))
    return EditOp("insert", g.nodes[i], attach_edges=tuple(attach))


def apply_edit(g: SceneGraph, op: EditOp, rng_choice: int) -> SceneGraph:
    """Apply ``op`` at node ``rng_choice``.

    For delete/substitute ``rng_choice`` is the edited node.  For insert it is
    the position the new node takes; attach edges resolve neighbour labels to
    the first matching node of ``g``.
    """
    if op.kind == "delete":
        if not 0 <= rng_choice < len(g):
            raise NodeNotFound(f"no node {rng_choice}")
        return g.remove_node(rng_choice)
    if op.kind == "substitute":
        return g.relabel(rng_choice, op.replacement_label)
    if not 0 <= rng_choice <= len(g):
        raise NodeNotFound(f"cannot insert at position {rng_choice}")
    p = rng_choice
    shift = lambda x: x + (x >= p)
    nodes = g.nodes[:p] + (op.node_label,) + g.nodes[p:]
    edges = {(shift(s), shift(d), l) for s, d, l in g.edges}
    taken = {(s, d) for s, d, _ in edges}
    for nb_ref, label, direction in op.attach_edges:
        if isinstance(nb_ref, int):
            if not 0 <= nb_ref < len(g):
                raise NodeNotFound(f"attach neighbour {nb_ref} not in graph")
            nb = shift(nb_ref)
        else:
            try:
                nb = shift(g.nodes.index(nb_ref))
            except ValueError:
                raise NodeNotFound(f"attach neighbour {nb_ref!r} not in graph") from None
        s, d = (p, nb) if direction == "out" else (nb, p)
        if (s, d) in taken:
            raise DuplicateEdge(f"edge {s}->{d} already present")
        taken.add((s, d))
        edges.add((s, d, label))
    return SceneGraph(nodes, frozenset(edges))
