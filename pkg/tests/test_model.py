import numpy as np
import pytest

from helpers import random_dag
from scenemod import tensor as T
from scenemod.datagen import ModificationInstance
from scenemod.graph import SceneGraph, isomorphic
from scenemod.model import (EDGE_DECODERS, FUSIONS, Batch, DecodeOverflow, GraphModifier, ModelConfig,
                            attention_mask, build_vocabs, lower_cells, target_order)
from scenemod.vocab import BOS, CLS, EOS, NULL, PAD, UNK

SRC = SceneGraph.from_triplets(["man", "shirt", "red"], [("man", "wearing", "shirt"), ("shirt", "attribute", "red")])
TGT = SceneGraph.from_triplets(["man", "shirt", "blue"], [("man", "wearing", "shirt"), ("shirt", "attribute", "blue")])
INST = ModificationInstance(SRC, "change red to blue", TGT)
EXTRA = [
    ModificationInstance(SceneGraph(("dog", "grass"), frozenset({(0, 1, "on")})), "remove grass", SceneGraph(("dog",))),
    ModificationInstance(SceneGraph(("dog",)), "I want grass",
                         SceneGraph(("dog", "grass", "green"), frozenset({(0, 1, "on"), (1, 2, "attribute")}))),
]
MICRO = dict(layers=1, heads=1, d_model=8, d_ff=16, gru_hidden=8)


def make(fusion="cross", edge_decoder="flat", seed=0, dtype=np.float64, data=None, **kw):
    data = data or [INST] + EXTRA
    cfg = ModelConfig(**{**MICRO, **kw}, fusion=fusion, edge_decoder=edge_decoder)
    return GraphModifier(cfg, *build_vocabs(data, fusion), seed=seed, dtype=dtype)


def test_config_validation():
    for bad in (dict(fusion="sum"), dict(edge_decoder="tree"), dict(d_model=10, heads=3), dict(layers=0)):
        with pytest.raises(ValueError):
            ModelConfig(**bad)


def test_vocab_sharing_follows_fusion():
    nv, qv, _ = build_vocabs([INST], "cross")
    assert nv is qv and "change" in nv
    nv, qv, _ = build_vocabs([INST], "concat")
    assert "change" not in nv and "change" in qv


@pytest.mark.parametrize("fusion", FUSIONS)
def test_attention_mask_structure(fusion):
    rng = np.random.Generator(np.random.PCG64(3))
    for _ in range(50):
        g = random_dag(rng, 6)
        q = int(rng.integers(1, 5))
        m = attention_mask(g, q, fusion)
        gate = fusion == "gating"
        n = len(g)
        assert m.shape == (n + q + 2 * gate,) * 2
        off = int(gate)
        for i in range(n):
            for j in range(n):
                allowed = i == j or j in g.neighbors(i)
                assert m[off + i, off + j] == allowed
        graph_rows = slice(0, n + gate)
        query_cols = slice(n + gate, None)
        assert m[graph_rows, query_cols].all() == (fusion == "cross")
        assert m[query_cols, graph_rows].any() == (fusion == "cross")
        if gate:
            assert m[0, : n + 1].all() and m[1: n + 1, 0].all()


def test_edge_aware_embeddings_match_manual_sum():
    model = make()
    b = Batch(model, [INST])
    x = model.node_embeddings(b).data[0]
    tn, te = model.params["tok_emb"].data, model.params["edge_emb"].data
    nv, ev = model.node_vocab, model.edge_vocab
    for i, label in enumerate(SRC.nodes):
        expected = tn[nv.id_of(label)] + sum(te[ev.id_of(l)] for l in SRC.incident_labels(i))
        np.testing.assert_allclose(x[i], expected, rtol=1e-12)


@pytest.mark.parametrize("fusion", FUSIONS)
def test_attention_weights_respect_mask(fusion):
    model = make(fusion, heads=2, layers=2)
    model.record_attention = True
    rng = np.random.Generator(np.random.PCG64(5))
    insts = [ModificationInstance(random_dag(rng, 6), "remove dog now", SRC) for _ in range(8)]
    b = Batch(model, insts)
    model.encode(b)
    mask, valid, _ = model._layout(b)
    for att in model.attention_maps:
        blocked = ~mask[:, None, :, :] & np.ones(att.shape, bool)
        assert np.all(att[blocked] == 0.0)
        np.testing.assert_allclose(att.sum(-1), 1.0, atol=1e-6)


@pytest.mark.parametrize("fusion", FUSIONS)
def test_node_order_equivariance(fusion):
    model = make(fusion, dtype=np.float64, layers=2, heads=2)
    rng = np.random.Generator(np.random.PCG64(11))
    g = SceneGraph.from_triplets(["man", "shirt", "red", "dog"],
                                 [("man", "wearing", "shirt"), ("shirt", "attribute", "red"), ("dog", "on", "man")])
    perm = [int(i) for i in rng.permutation(len(g))]
    h = g.permuted(perm)
    off = int(fusion == "gating")
    outs = []
    for graph in (g, h):
        enc = model.encode(Batch(model, [ModificationInstance(graph, "remove red", graph)], targets=False))
        outs.append(enc.m.data[0])
    np.testing.assert_allclose(outs[1][off: off + 4], outs[0][off: off + 4][perm], atol=1e-12)
    np.testing.assert_allclose(outs[1][off + 4:], outs[0][off + 4:], atol=1e-12)
    with T.no_grad():
        a = model.generate_batch([ModificationInstance(g, "remove red", g)])[0]
        b = model.generate_batch([ModificationInstance(h, "remove red", h)])[0]
    assert (a is None) == (b is None)
    if a is not None:
        assert isomorphic(a, b)


def test_concat_keeps_graph_and_query_separate():
    model = make("concat")
    a = model.encode(Batch(model, [ModificationInstance(SRC, "change red to blue", TGT)], targets=False))
    b = model.encode(Batch(model, [ModificationInstance(SRC, "remove shirt", TGT)], targets=False))
    np.testing.assert_array_equal(a.m.data[0, :3], b.m.data[0, :3])
    other = SceneGraph.from_triplets(["dog", "grass"], [("dog", "on", "grass")])
    c = model.encode(Batch(model, [ModificationInstance(other, "remove shirt", TGT)], targets=False))
    np.testing.assert_allclose(c.m.data[0, 2:4], b.m.data[0, 3:5], atol=1e-12)


def test_cross_attention_mixes_modalities():
    model = make("cross")
    a = model.encode(Batch(model, [ModificationInstance(SRC, "change red to blue", TGT)], targets=False))
    b = model.encode(Batch(model, [ModificationInstance(SRC, "remove shirt", TGT)], targets=False))
    assert not np.allclose(a.m.data[0, :3], b.m.data[0, :3])


def test_gating_memory_layout():
    model = make("gating")
    enc = model.encode(Batch(model, [INST], targets=False))
    n, q = len(SRC), 4
    assert enc.mask[0].sum() == n + q + 2
    g_x, g_y = model.last_gates
    gx, gy = g_x.data[0, :, 0], g_y.data[0, :, 0]
    assert gx[0] == 1.0 and gy[0] == 1.0  # CLS rows pass through
    assert np.all((g_x.data[0, 1:] > 0) & (g_x.data[0, 1:] < 1))
    np.testing.assert_array_equal(enc.m.data[0, 0], enc.cls_graph.data[0])


def test_target_order_ties():
    src = SceneGraph(("b", "a", "c"))
    tgt = SceneGraph(("a", "c", "b", "z"))
    # matched nodes follow source positions, the new node comes last
    assert [tgt.nodes[i] for i in target_order(tgt, src)] == ["b", "a", "c", "z"]
    assert [tgt.nodes[i] for i in target_order(tgt)] == ["a", "b", "c", "z"]
    chain = SceneGraph(("x", "y"), frozenset({(1, 0, "on")}))
    assert target_order(chain, SceneGraph(("x", "y"))) == [1, 0]


def test_batch_targets_encode_edges_lower_to_higher():
    model = make()
    b = Batch(model, [INST])
    order = [b.targets[0].nodes[i] for i in range(3)]
    assert order == ["man", "shirt", "blue"]
    assert list(b.tgt_in[0]) == [BOS] + model.node_vocab.ids_of(order)
    assert list(b.tgt_out[0]) == model.node_vocab.ids_of(order) + [EOS]
    cells = b.cell_labels[0]
    ev = model.edge_vocab
    assert cells == {(1, 0): ev.id_of("wearing"), (2, 0): NULL,
                     (2, 1): ev.id_of("attribute")}
    assert lower_cells(4) == [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)]


@pytest.mark.parametrize("edge_decoder", EDGE_DECODERS)
def test_uniform_outputs_give_log_class_count_loss(edge_decoder):
    model = make(edge_decoder=edge_decoder)
    for name in ("node.out_W", "node.out_b", "node.out_bias", "edge.out_W", "edge.out_b"):
        model.params[name].data[...] = 0.0
    data = [INST] + EXTRA
    b = Batch(model, data)
    vn, ve = len(model.node_vocab), len(model.edge_vocab)
    expected = np.mean([(len(i.target) + 1) * np.log(vn) + len(lower_cells(len(i.target))) * np.log(ve)
                        for i in data])
    assert float(model.loss(b).data) == pytest.approx(expected, rel=1e-12)
    node, edge = model.loss_terms(b)
    assert float(node.data) >= 0 and float(edge.data) >= 0


def test_flat_equals_adjacency_on_two_node_targets():
    data = [EXTRA[0].__class__(SRC, "keep man and shirt", SceneGraph(("man", "shirt"), frozenset({(0, 1, "wearing")})))]
    flat = make(edge_decoder="flat", data=data)
    adj = make(edge_decoder="adjacency", data=data)
    for k, p in flat.params.items():
        adj.params[k].data = p.data.copy()
    adj.params["edge.row_W"].data = np.eye(flat.config.gru_hidden)
    adj.params["edge.row_b"].data[...] = 0.0
    lf = [float(t.data) for t in flat.loss_terms(Batch(flat, data))]
    la = [float(t.data) for t in adj.loss_terms(Batch(adj, data))]
    assert lf == pytest.approx(la, rel=1e-12)


def test_greedy_skips_specials_and_overflow():
    model = make()
    bias = model.params["node.out_bias"].data
    bias[...] = 0.0
    bias[[PAD, UNK, BOS, CLS]] = 1e6
    man = model.node_vocab.id_of("man")
    bias[man] = 1e3
    out = model.generate_batch([INST])[0]
    assert out.nodes == ("man",) * model.config.max_decode_nodes
    bias[EOS] = 1e4
    assert model.generate_batch([INST]) == [None]
    with pytest.raises(DecodeOverflow):
        model.generate(SRC, "change red to blue")


def test_greedy_edges_point_forward():
    model = make(layers=2)
    with T.no_grad():
        outs = model.generate_batch([INST] + EXTRA)
    for g in outs:
        if g is not None:
            assert all(s < d for s, d, _ in g.edges)


def test_batched_generation_matches_single():
    rng = np.random.Generator(np.random.PCG64(2))
    insts = [ModificationInstance(random_dag(rng, 5, labels=("man", "shirt", "red", "dog")), q, SRC)
             for q in ("remove red", "change red to blue", "i want dog", "remove man shirt")]
    for ed in EDGE_DECODERS:
        model = make(edge_decoder=ed, seed=4)
        model.params["node.out_bias"].data[EOS] = -0.5
        batched = model.generate_batch(insts)
        single = [model.generate_batch([i])[0] for i in insts]
        assert batched == single


@pytest.mark.parametrize("edge_decoder", EDGE_DECODERS)
@pytest.mark.parametrize("fusion", FUSIONS)
def test_full_loss_gradient_micro(fusion, edge_decoder):
    model = make(fusion, edge_decoder, data=[INST])
    b = Batch(model, [INST])
    with T.default_dtype(np.float64):
        err = T.grad_check(lambda *ps: model.loss(b), model.parameters())
    assert err < 1e-4, err


def test_float32_default_parameters():
    model = make(dtype=np.float32)
    assert all(p.data.dtype == np.float32 for p in model.parameters())
    assert model.loss(Batch(model, [INST])).data.dtype == np.float32
