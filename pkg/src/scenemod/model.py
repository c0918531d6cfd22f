"""Graph-conditioned sparse transformer encoder with GRU node/edge decoders.

All computation is batched: a batch of instances is laid out as one padded
sequence per instance, ``[graph part | query part]``, and a boolean
attention mask decides who sees whom.  Concatenation and gating fusion block
all graph/query attention (equivalent to running the shared encoder on each
part separately); cross-attention lets graph nodes see every query token and
query tokens see everything.

Decoding follows the factorisation p(nodes) * p(edges | nodes): a GRU emits
node labels in topological order, then a second GRU labels every
lower-triangle cell ``(i, j), j < i`` either with an edge label (meaning an
edge ``j -> i``) or NULL.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .graph import SceneGraph, topological_order
from .tensor import Tensor
from .vocab import BOS, CLS, EOS, NULL, PAD, UNK, Vocabulary, tokenize

FUSIONS = ("concat", "gating", "cross")
EDGE_DECODERS = ("adjacency", "flat")


class DecodeOverflow(RuntimeError):
    pass


@dataclass
class ModelConfig:
    layers: int = 3
    heads: int = 4
    d_model: int = 256
    d_ff: int = 512
    gru_hidden: int = 256
    fusion: str = "cross"
    edge_decoder: str = "flat"
    max_decode_nodes: int = 8

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}")
        if self.edge_decoder not in EDGE_DECODERS:
            raise ValueError(f"edge_decoder must be one of {EDGE_DECODERS}")
        for name in ("layers", "heads", "d_model", "d_ff", "gru_hidden", "max_decode_nodes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncoderOutput:
    """Padded fused memory plus the holistic [CLS] vectors (gating only)."""

    m: Tensor               # (B, L, d)
    mask: np.ndarray        # (B, L) valid memory rows
    cls_graph: Tensor | None = None
    cls_query: Tensor | None = None


def build_vocabs(instances, fusion: str, min_count: int = 1):
    """Node, query and edge vocabularies from training instances.

    Under cross-attention the node vocabulary also covers query words and is
    used for both inputs.
    """
    node_labels, query_tokens, edge_labels = [], [], []
    for inst in instances:
        for g in (inst.source, inst.target):
            node_labels += list(g.nodes)
            edge_labels += [l for _, _, l in g.edges]
        query_tokens += tokenize(inst.query)
    edge_vocab = Vocabulary.build(edge_labels, min_count, edge=True)
    if fusion == "cross":
        shared = Vocabulary.build(node_labels + query_tokens, min_count)
        return shared, shared, edge_vocab
    return Vocabulary.build(node_labels, min_count), Vocabulary.build(query_tokens, min_count), edge_vocab


def sinusoid(n: int, d: int, dtype) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(dtype)


def target_order(target: SceneGraph, source: SceneGraph | None = None) -> list[int]:
    """Topological order of ``target``; ties by matching source position, then label.

    A target node matches the first unused source node with the same label;
    unmatched (new) nodes sort after matched ones.
    """
    rank = [len(source) if source is not None else 0] * len(target)
    if source is not None:
        used = set()
        for i, label in enumerate(target.nodes):
            for j, s_label in enumerate(source.nodes):
                if j not in used and s_label == label:
                    used.add(j)
                    rank[i] = j
                    break
    return topological_order(target, [(rank[i], target.nodes[i]) for i in range(len(target))])


def attention_mask(g: SceneGraph, query_len: int, fusion: str) -> np.ndarray:
    """Unpadded mask for one instance.

    Row/column order: ``[CLS_g] nodes [CLS_q] tokens`` (the CLS entries exist
    only under gating).  Nodes always see themselves and first-order
    neighbours in either direction.
    """
    n = len(g)
    gate = fusion == "gating"
    gp = n + gate
    L = gp + query_len + gate
    m = np.zeros((L, L), dtype=bool)
    off = int(gate)
    for i in range(n):
        m[off + i, off + i] = True
    for s, d, _ in g.edges:
        m[off + s, off + d] = m[off + d, off + s] = True
    if gate:
        m[0, : gp] = True
        m[off: gp, 0] = True
    m[gp:, gp:] = True
    if fusion == "cross":
        m[:gp, gp:] = True
        m[gp:, :gp] = True
    return m


class Batch:
    """Padded integer arrays for a list of instances."""

    def __init__(self, model: "GraphModifier", instances, targets: bool = True):
        nv, qv, ev = model.node_vocab, model.query_vocab, model.edge_vocab
        self.instances = list(instances)
        B = self.B = len(self.instances)
        srcs = [inst.source for inst in self.instances]
        self.src_len = np.array([len(g) for g in srcs], dtype=np.int64)
        Ng = max(1, int(self.src_len.max(initial=0)))
        self.src_ids = np.zeros((B, Ng), dtype=np.int64)
        self.incidence = np.zeros((B, Ng, len(ev)), dtype=model.dtype)
        queries = [tokenize(inst.query) for inst in self.instances]
        self.q_len = np.array([len(q) for q in queries], dtype=np.int64)
        Nq = max(1, int(self.q_len.max(initial=0)))
        self.q_ids = np.zeros((B, Nq), dtype=np.int64)
        self.graphs = srcs
        for b, (g, q) in enumerate(zip(srcs, queries)):
            self.src_ids[b, : len(g)] = nv.ids_of(g.nodes)
            for s, d, l in g.edges:
                e = ev.id_of(l)
                self.incidence[b, s, e] += 1
                self.incidence[b, d, e] += 1
            self.q_ids[b, : len(q)] = qv.ids_of(q)
        if targets:
            self._targets(nv, ev)

    def _targets(self, nv: Vocabulary, ev: Vocabulary):
        B = self.B
        ordered = []
        for inst in self.instances:
            order = target_order(inst.target, inst.source)
            ordered.append(inst.target.permuted(order))
        self.targets = ordered
        self.tgt_len = np.array([len(g) for g in ordered], dtype=np.int64)
        Tn = int(self.tgt_len.max(initial=0)) + 1
        self.tgt_in = np.zeros((B, Tn), dtype=np.int64)
        self.tgt_out = np.zeros((B, Tn), dtype=np.int64)
        self.tgt_w = np.zeros((B, Tn))
        self.cell_labels = []
        for b, g in enumerate(ordered):
            ids = nv.ids_of(g.nodes)
            n = len(ids)
            self.tgt_in[b, : n + 1] = [BOS] + ids
            self.tgt_out[b, : n + 1] = ids + [EOS]
            self.tgt_w[b, : n + 1] = 1.0
            adj = {(s, d): l for s, d, l in g.edges}
            self.cell_labels.append({(i, j): (ev.id_of(adj[(j, i)]) if (j, i) in adj else NULL)
                                     for i in range(n) for j in range(i)})


def lower_cells(n: int) -> list[tuple[int, int]]:
    """Row-major lower triangle: (1,0), (2,0), (2,1), (3,0), ..."""
    return [(i, j) for i in range(1, n) for j in range(i)]


class GraphModifier:
    """Model parameters plus the forward passes that use them."""

    def __init__(self, config: ModelConfig, node_vocab: Vocabulary, query_vocab: Vocabulary,
                 edge_vocab: Vocabulary, seed: int = 0, dtype=np.float32):
        self.config = config
        self.node_vocab = node_vocab
        self.query_vocab = query_vocab
        self.edge_vocab = edge_vocab
        self.dtype = np.dtype(dtype).type
        self.shared_query = config.fusion == "cross"
        if self.shared_query and query_vocab != node_vocab:
            raise ValueError("cross-attention fusion needs one shared node/query vocabulary")
        self.params: dict[str, Tensor] = {}
        self._init(np.random.Generator(np.random.PCG64(seed)))
        self.record_attention = False
        self.attention_maps: list[np.ndarray] = []

    # ------------------------------------------------------------------ params

    def _add(self, name, arr):
        self.params[name] = Tensor(np.asarray(arr, dtype=self.dtype), requires_grad=True, name=name)

    def _init(self, rng):
        c = self.config
        d, H, F = c.d_model, c.gru_hidden, c.d_ff

        def xavier(fan_in, fan_out, shape=None):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=shape or (fan_in, fan_out))

        emb = lambda n: rng.normal(0.0, d ** -0.5, size=(n, d))
        self._add("tok_emb", emb(len(self.node_vocab)))
        if not self.shared_query:
            self._add("query_emb", emb(len(self.query_vocab)))
        self._add("edge_emb", emb(len(self.edge_vocab)))
        for l in range(c.layers):
            p = f"enc.{l}."
            self._add(p + "Wqkv", xavier(d, d, (d, 3 * d)))
            self._add(p + "bq", np.zeros(d))
            self._add(p + "bv", np.zeros(d))
            self._add(p + "Wo", xavier(d, d))
            self._add(p + "bo", np.zeros(d))
            self._add(p + "ln1_g", np.ones(d))
            self._add(p + "ln1_b", np.zeros(d))
            self._add(p + "W1", xavier(d, F))
            self._add(p + "b1", np.zeros(F))
            self._add(p + "W2", xavier(F, d))
            self._add(p + "b2", np.zeros(d))
            self._add(p + "ln2_g", np.ones(d))
            self._add(p + "ln2_b", np.zeros(d))
        if c.fusion == "gating":
            for side in ("gate_x", "gate_y"):
                self._add(side + ".W1", xavier(2 * d, d))
                self._add(side + ".b1", np.zeros(d))
                self._add(side + ".W2", xavier(d, d))
                self._add(side + ".b2", np.zeros(d))
        self._add("node.init_W", xavier(d, H))
        self._add("node.init_b", np.zeros(H))
        self._gru_params("node.gru", d, H, xavier)
        self._add("node.attn_W", xavier(d, H))
        self._add("node.out_W", xavier(H + d, d))
        self._add("node.out_b", np.zeros(d))
        self._add("node.out_bias", np.zeros(len(self.node_vocab)))
        self._gru_params("edge.gru", d + 2 * H, H, xavier)
        self._add("edge.attn_W", xavier(d, H))
        self._add("edge.out_W", xavier(H + d, len(self.edge_vocab)))
        self._add("edge.out_b", np.zeros(len(self.edge_vocab)))
        if c.edge_decoder == "adjacency":
            self._add("edge.row_W", xavier(H, H))
            self._add("edge.row_b", np.zeros(H))

    def _gru_params(self, prefix, n_in, H, xavier):
        self._add(prefix + ".W_ih", xavier(n_in, H, (n_in, 3 * H)))
        self._add(prefix + ".W_hh", xavier(H, H, (H, 3 * H)))
        self._add(prefix + ".b_ih", np.zeros(3 * H))
        self._add(prefix + ".b_hh", np.zeros(3 * H))

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def astype(self, dtype) -> "GraphModifier":
        self.dtype = np.dtype(dtype).type
        for p in self.params.values():
            p.data = p.data.astype(self.dtype)
            p.grad = None
        return self

    # ----------------------------------------------------------------- encoder

    def node_embeddings(self, batch: Batch) -> Tensor:
        """Edge-aware node vectors: label embedding plus incident edge-label embeddings."""
        P = self.params
        x = T.embedding(P["tok_emb"], batch.src_ids)
        return x + T.matmul(Tensor(batch.incidence), P["edge_emb"])

    def _layout(self, batch: Batch):
        c = self.config
        gate = c.fusion == "gating"
        B = batch.B
        Ng, Nq = batch.src_ids.shape[1], batch.q_ids.shape[1]
        gp, qp = Ng + gate, Nq + gate
        L = gp + qp
        mask = np.zeros((B, L, L), dtype=bool)
        valid = np.zeros((B, L), dtype=bool)
        for b in range(B):
            n, q = int(batch.src_len[b]), int(batch.q_len[b])
            m = attention_mask(batch.graphs[b], q, c.fusion)
            gl, ql = n + gate, q + gate
            rows = np.r_[np.arange(gl), gp + np.arange(ql)]
            mask[b][np.ix_(rows, rows)] = m
            valid[b, rows] = True
        idx = np.arange(L)
        mask[:, idx, idx] |= ~valid  # padding rows see themselves only
        return mask, valid, gp

    def _embed_inputs(self, batch: Batch) -> Tensor:
        c = self.config
        P = self.params
        gate = c.fusion == "gating"
        B = batch.B
        qtab = P["tok_emb"] if self.shared_query else P["query_emb"]
        graph = self.node_embeddings(batch)
        q_ids = batch.q_ids
        if gate:
            graph = T.concat([T.embedding(P["tok_emb"], np.full((B, 1), CLS)), graph], axis=1)
            q_ids = np.concatenate([np.full((B, 1), CLS), q_ids], axis=1)
        # unit-norm embedding rows are scaled up so positions do not drown the token identity
        scale = np.sqrt(c.d_model)
        graph = T.scale(graph, scale)
        query = T.scale(T.embedding(qtab, q_ids), scale) + Tensor(sinusoid(q_ids.shape[1], c.d_model, self.dtype))
        return T.concat([graph, query], axis=1)

    def _layer(self, x: Tensor, mask: np.ndarray, l: int) -> Tensor:
        c = self.config
        P = self.params
        p = f"enc.{l}."
        B, L, d = x.shape
        h, dk = c.heads, c.d_model // c.heads
        # keys carry no bias: softmax is invariant to it
        bias = T.concat([P[p + "bq"], Tensor(np.zeros(d, dtype=self.dtype)), P[p + "bv"]], axis=0)
        qkv = (x @ P[p + "Wqkv"] + bias).reshape(B, L, 3, h, dk)
        qkv = qkv.transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = T.scale(q @ k.transpose(0, 1, 3, 2), 1.0 / np.sqrt(dk))
        att = T.masked_softmax(scores, mask[:, None, :, :])
        if self.record_attention:
            self.attention_maps.append(att.data.copy())
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(B, L, d)
        x = T.layer_norm(x + (ctx @ P[p + "Wo"] + P[p + "bo"]), P[p + "ln1_g"], P[p + "ln1_b"])
        ff = T.relu(x @ P[p + "W1"] + P[p + "b1"]) @ P[p + "W2"] + P[p + "b2"]
        return T.layer_norm(x + ff, P[p + "ln2_g"], P[p + "ln2_b"])

    def encode(self, batch: Batch) -> EncoderOutput:
        c = self.config
        mask, valid, gp = self._layout(batch)
        self.attention_maps = []
        x = self._embed_inputs(batch)
        for l in range(c.layers):
            x = self._layer(x, mask, l)
        if c.fusion != "gating":
            return EncoderOutput(x, valid)
        cls_g = x[:, 0, :]
        cls_q = x[:, gp, :]
        m = self.fuse_gating(x, cls_g, cls_q, gp)
        return EncoderOutput(m, valid, cls_g, cls_q)

    def fuse_gating(self, x: Tensor, cls_graph: Tensor, cls_query: Tensor, gp: int) -> Tensor:
        """Gate graph rows by the query summary and query rows by the graph summary.

        Rows ``0`` and ``gp`` hold the two [CLS] vectors and pass through
        ungated.
        """
        P = self.params
        B, L, d = x.shape

        def gate(rows: Tensor, ctx: Tensor, side: str) -> Tensor:
            n = rows.shape[1]
            ctx = T.concat([ctx.reshape(B, 1, d)] * n, axis=1) if n > 1 else ctx.reshape(B, 1, d)
            hid = T.tanh(T.concat([rows, ctx], axis=-1) @ P[side + ".W1"] + P[side + ".b1"])
            return T.sigmoid(hid @ P[side + ".W2"] + P[side + ".b2"])

        graph = x[:, :gp, :]
        query = x[:, gp:, :]
        keep_g = np.zeros((1, gp, 1), dtype=self.dtype)
        keep_g[0, 0] = 1.0
        keep_q = np.zeros((1, L - gp, 1), dtype=self.dtype)
        keep_q[0, 0] = 1.0
        g_x = gate(graph, cls_query, "gate_x") * Tensor(1.0 - keep_g) + Tensor(keep_g)
        g_y = gate(query, cls_graph, "gate_y") * Tensor(1.0 - keep_q) + Tensor(keep_q)
        self.last_gates = (g_x, g_y)
        return T.concat([graph * g_x, query * g_y], axis=1)

    # ---------------------------------------------------------------- decoders

    def _gru(self, gi: Tensor, h: Tensor, prefix: str) -> Tensor:
        P = self.params
        H = self.config.gru_hidden
        gh = h @ P[prefix + ".W_hh"] + P[prefix + ".b_hh"]
        r = T.sigmoid(gi[:, :H] + gh[:, :H])
        z = T.sigmoid(gi[:, H:2 * H] + gh[:, H:2 * H])
        n = T.tanh(gi[:, 2 * H:] + r * gh[:, 2 * H:])
        return n + z * (h - n)

    @staticmethod
    def _attend(keys: Tensor, mem: Tensor, mask: np.ndarray, h: Tensor) -> Tensor:
        """Luong 'general' attention: score_k = h . (W m_k), context = sum a_k m_k."""
        B, L, _ = mem.shape
        scores = (keys @ h.reshape(B, -1, 1)).reshape(B, L)
        alpha = T.masked_softmax(scores, mask)
        return (alpha.reshape(B, 1, L) @ mem).reshape(B, -1)

    def _node_logits(self, hc: Tensor) -> Tensor:
        P = self.params
        proj = hc @ P["node.out_W"] + P["node.out_b"]
        return proj @ P["tok_emb"].transpose() + P["node.out_bias"]

    def _init_hidden(self, enc: EncoderOutput) -> Tensor:
        P = self.params
        B, L, _ = enc.m.shape
        w = enc.mask / enc.mask.sum(axis=1, keepdims=True)
        pooled = (Tensor(w.reshape(B, 1, L).astype(self.dtype)) @ enc.m).reshape(B, -1)
        return T.tanh(pooled @ P["node.init_W"] + P["node.init_b"])

    def decode_nodes_teacher(self, enc: EncoderOutput, batch: Batch):
        """Teacher-forced node decoding.

        Returns ``(logits (B, T, V), states (B, T, H))`` where step ``t``
        consumed ``tgt_in[:, t]``; ``states[:, k + 1]`` represents node ``k``.
        """
        P = self.params
        mem = enc.m
        keys = mem @ P["node.attn_W"]
        gi_all = T.embedding(P["tok_emb"], batch.tgt_in) @ P["node.gru.W_ih"] + P["node.gru.b_ih"]
        h = self._init_hidden(enc)
        hs, cs = [], []
        for t in range(batch.tgt_in.shape[1]):
            h = self._gru(gi_all[:, t, :], h, "node.gru")
            hs.append(h)
            cs.append(self._attend(keys, mem, enc.mask, h))
        states = T.stack(hs, axis=1)
        logits = self._node_logits(T.concat([states, T.stack(cs, axis=1)], axis=-1))
        return logits, states

    def _node_hidden_table(self, states: Tensor):
        """States after consuming each node label, flattened to (B * Tn, H)."""
        B, Tn1, H = states.shape
        node_h = states[:, 1:, :] if Tn1 > 1 else states
        return node_h.reshape(B * node_h.shape[1], H), node_h.shape[1]

    def _edge_inputs(self, prev: np.ndarray, hi: Tensor, hj: Tensor) -> Tensor:
        P = self.params
        x = T.concat([T.embedding(P["edge_emb"], prev), hi, hj], axis=-1)
        return x @ P["edge.gru.W_ih"] + P["edge.gru.b_ih"]

    def _edge_run(self, gi_all: Tensor, h: Tensor, mem: Tensor, mask: np.ndarray) -> Tensor:
        P = self.params
        keys = mem @ P["edge.attn_W"]
        hs, cs = [], []
        for t in range(gi_all.shape[1]):
            h = self._gru(gi_all[:, t, :], h, "edge.gru")
            hs.append(h)
            cs.append(self._attend(keys, mem, mask, h))
        hc = T.concat([T.stack(hs, axis=1), T.stack(cs, axis=1)], axis=-1)
        return hc @ P["edge.out_W"] + P["edge.out_b"]

    def edge_loss_teacher(self, enc: EncoderOutput, batch: Batch, states: Tensor) -> Tensor:
        table, Tn = self._node_hidden_table(states)
        if self.config.edge_decoder == "flat":
            return self._flat_teacher(enc, batch, table, Tn)
        return self._adjacency_teacher(enc, batch, table, Tn)

    def _flat_teacher(self, enc, batch, table, Tn):
        B = batch.B
        cells = [lower_cells(int(n)) for n in batch.tgt_len]
        C = max((len(c) for c in cells), default=0)
        if C == 0:
            return Tensor(np.zeros((), dtype=self.dtype))
        gold = np.full((B, C), PAD, dtype=np.int64)
        w = np.zeros((B, C))
        ii = np.zeros((B, C), dtype=np.int64)
        jj = np.zeros((B, C), dtype=np.int64)
        for b, cl in enumerate(cells):
            for k, (i, j) in enumerate(cl):
                gold[b, k] = batch.cell_labels[b][(i, j)]
                w[b, k] = 1.0
                ii[b, k], jj[b, k] = i, j
        prev = np.concatenate([np.full((B, 1), BOS), gold[:, :-1]], axis=1)
        prev[prev == PAD] = BOS
        base = (np.arange(B) * Tn)[:, None]
        hi = T.take(table, (base + ii).reshape(-1)).reshape(B, C, -1)
        hj = T.take(table, (base + jj).reshape(-1)).reshape(B, C, -1)
        last = np.maximum(batch.tgt_len - 1, 0)
        h0 = T.take(table, np.arange(B) * Tn + last)
        logits = self._edge_run(self._edge_inputs(prev, hi, hj), h0, enc.m, enc.mask)
        return T.cross_entropy(logits, gold, w)

    def _adjacency_teacher(self, enc, batch, table, Tn):
        P = self.params
        rows = [(b, i) for b in range(batch.B) for i in range(1, int(batch.tgt_len[b]))]
        if not rows:
            return Tensor(np.zeros((), dtype=self.dtype))
        R = len(rows)
        J = max(i for _, i in rows)
        gold = np.full((R, J), PAD, dtype=np.int64)
        w = np.zeros((R, J))
        jj = np.zeros((R, J), dtype=np.int64)
        rb = np.array([b for b, _ in rows])
        ri = np.array([i for _, i in rows])
        for r, (b, i) in enumerate(rows):
            for j in range(i):
                gold[r, j] = batch.cell_labels[b][(i, j)]
                w[r, j] = 1.0
                jj[r, j] = j
        prev = np.concatenate([np.full((R, 1), BOS), gold[:, :-1]], axis=1)
        prev[prev == PAD] = BOS
        row_h = T.take(table, rb * Tn + ri)
        hi = T.take(table, np.repeat(rb * Tn + ri, J)).reshape(R, J, -1)
        hj = T.take(table, ((rb * Tn)[:, None] + jj).reshape(-1)).reshape(R, J, -1)
        h0 = row_h @ P["edge.row_W"] + P["edge.row_b"]
        mem = T.take(enc.m, rb)
        logits = self._edge_run(self._edge_inputs(prev, hi, hj), h0, mem, enc.mask[rb])
        return T.cross_entropy(logits, gold, w)

    # ------------------------------------------------------------------- loss

    def loss_terms(self, batch: Batch):
        """Summed node and edge negative log-likelihoods (not yet averaged)."""
        enc = self.encode(batch)
        logits, states = self.decode_nodes_teacher(enc, batch)
        node_nll = T.cross_entropy(logits, batch.tgt_out, batch.tgt_w)
        edge_nll = self.edge_loss_teacher(enc, batch, states)
        return node_nll, edge_nll

    def loss(self, batch: Batch) -> Tensor:
        node_nll, edge_nll = self.loss_terms(batch)
        return T.scale(node_nll + edge_nll, 1.0 / batch.B)

    # --------------------------------------------------------------- greedy

    def _node_allowed(self) -> np.ndarray:
        allowed = np.ones(len(self.node_vocab), dtype=bool)
        allowed[[PAD, UNK, BOS, CLS]] = False
        return allowed

    def _edge_allowed(self) -> np.ndarray:
        allowed = np.zeros(len(self.edge_vocab), dtype=bool)
        allowed[NULL:] = True
        return allowed

    def decode_nodes_greedy(self, enc: EncoderOutput):
        """Greedy node labels per instance plus the node hidden table.

        Returns ``(labels: list of id lists, table (B * M, H), M)`` where row
        ``b * M + k`` of the table is the state after consuming node ``k``.
        """
        P = self.params
        M = self.config.max_decode_nodes
        B = enc.m.shape[0]
        keys = enc.m @ P["node.attn_W"]
        h = self._init_hidden(enc)
        penalty = np.where(self._node_allowed(), 0.0, -np.inf)
        prev = np.full(B, BOS, dtype=np.int64)
        labels: list[list[int]] = [[] for _ in range(B)]
        done = np.zeros(B, dtype=bool)
        H = self.config.gru_hidden
        table = np.zeros((B, M, H), dtype=self.dtype)
        for t in range(M + 1):
            gi = T.embedding(P["tok_emb"], prev) @ P["node.gru.W_ih"] + P["node.gru.b_ih"]
            h = self._gru(gi, h, "node.gru")
            if t > 0:
                table[~done, t - 1] = h.data[~done]
                # instances that just consumed their M-th node are truncated
            if t == M:
                break
            c = self._attend(keys, enc.m, enc.mask, h)
            logits = self._node_logits(T.concat([h, c], axis=-1)).data + penalty
            pred = logits.argmax(axis=-1)
            for b in np.flatnonzero(~done):
                if pred[b] == EOS:
                    done[b] = True
                else:
                    labels[b].append(int(pred[b]))
            if done.all():
                break
            prev = np.where(done, EOS, pred)
        return labels, Tensor(table.reshape(B * M, H)), M

    def _greedy_run(self, ii, jj, bi, h0: Tensor, mem: Tensor, mask: np.ndarray, table: Tensor,
                    Tn: int, steps_valid: np.ndarray) -> np.ndarray:
        """Autoregressive edge labelling of S sequences of cells ``(ii, jj)``."""
        P = self.params
        S, C = ii.shape
        keys = mem @ P["edge.attn_W"]
        penalty = np.where(self._edge_allowed(), 0.0, -np.inf)
        prev = np.full(S, BOS, dtype=np.int64)
        out = np.full((S, C), NULL, dtype=np.int64)
        h = h0
        for k in range(C):
            hi = T.take(table, bi * Tn + ii[:, k])
            hj = T.take(table, bi * Tn + jj[:, k])
            gi = self._edge_inputs(prev, hi, hj)
            h = self._gru(gi, h, "edge.gru")
            c = self._attend(keys, mem, mask, h)
            logits = (T.concat([h, c], axis=-1) @ P["edge.out_W"] + P["edge.out_b"]).data + penalty
            pred = logits.argmax(axis=-1)
            out[:, k] = np.where(steps_valid[:, k], pred, NULL)
            prev = pred
        return out

    def decode_edges_greedy(self, enc: EncoderOutput, sizes: Sequence[int], table: Tensor, Tn: int):
        """Greedy label for every lower-triangle cell; returns one dict per instance."""
        P = self.params
        B = len(sizes)
        result = [dict() for _ in range(B)]
        if self.config.edge_decoder == "flat":
            cells = [lower_cells(n) for n in sizes]
            C = max((len(c) for c in cells), default=0)
            if C == 0:
                return result
            ii = np.zeros((B, C), dtype=np.int64)
            jj = np.zeros((B, C), dtype=np.int64)
            valid = np.zeros((B, C), dtype=bool)
            for b, cl in enumerate(cells):
                for k, (i, j) in enumerate(cl):
                    ii[b, k], jj[b, k], valid[b, k] = i, j, True
            bi = np.arange(B)
            h0 = T.take(table, bi * Tn + np.maximum(np.asarray(sizes) - 1, 0))
            out = self._greedy_run(ii, jj, bi, h0, enc.m, enc.mask, table, Tn, valid)
            for b, cl in enumerate(cells):
                for k, cell in enumerate(cl):
                    result[b][cell] = int(out[b, k])
            return result
        rows = [(b, i) for b in range(B) for i in range(1, sizes[b])]
        if not rows:
            return result
        R = len(rows)
        J = max(i for _, i in rows)
        rb = np.array([b for b, _ in rows])
        ri = np.array([i for _, i in rows])
        ii = np.repeat(ri[:, None], J, axis=1)
        jj = np.repeat(np.arange(J)[None, :], R, axis=0)
        valid = jj < ri[:, None]
        h0 = T.take(table, rb * Tn + ri) @ P["edge.row_W"] + P["edge.row_b"]
        out = self._greedy_run(ii, jj, rb, h0, T.take(enc.m, rb), enc.mask[rb], table, Tn, valid)
        for r, (b, i) in enumerate(rows):
            for j in range(i):
                result[b][(i, j)] = int(out[r, j])
        return result

    def generate_batch(self, instances) -> list[SceneGraph | None]:
        """Greedy graphs for each instance; ``None`` where no node was decoded."""
        with T.no_grad():
            batch = Batch(self, instances, targets=False)
            enc = self.encode(batch)
            labels, table, M = self.decode_nodes_greedy(enc)
            sizes = [len(l) for l in labels]
            cells = self.decode_edges_greedy(enc, sizes, table, M)
        out = []
        for b, ids in enumerate(labels):
            if not ids:
                out.append(None)
                continue
            nodes = tuple(self.node_vocab.token(i) for i in ids)
            edges = frozenset((j, i, self.edge_vocab.token(lab)) for (i, j), lab in cells[b].items()
                              if lab != NULL)
            out.append(SceneGraph(nodes, edges))
        return out

    def generate(self, source: SceneGraph, query: str) -> SceneGraph:
        from .datagen.instances import ModificationInstance

        g = self.generate_batch([ModificationInstance(source, query, source)])[0]
        if g is None:
            raise DecodeOverflow("decoder emitted EOS before any node")
        return g
