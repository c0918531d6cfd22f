"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (see ``conftest.verdict``); the lines are
repeated in the terminal summary.  The training criteria are slow: the
ablation alone trains twelve models on a 5000-instance corpus.
"""
import time

import numpy as np
import pytest

from helpers import brute_prf, random_dag, shuffled
from scenemod import checkpoint as C
from scenemod import tensor as T
from scenemod.checkpoint import Checkpoint, CorruptCheckpoint
from scenemod.datagen import (GenConfig, ModificationInstance, SimilarityTable, calibrate_P, filter_instance,
                              generate_dataset, load_templates, read_jsonl, sample_graphs, simulate_mean_ops,
                              write_jsonl)
from scenemod.evaluation import copy_source, edge_prf, evaluate, graph_accuracy, node_prf, predict
from scenemod.graph import SceneGraph, isomorphic_bruteforce, weakly_connected
from scenemod.model import Batch, GraphModifier, ModelConfig, build_vocabs
from scenemod.training import TrainConfig, fit
from test_tensor import PRIMITIVES

pytestmark = pytest.mark.slow

TEMPLATES = load_templates()
SIM = SimilarityTable.default()
SPLITS = {"train": 5000, "dev": 500, "test": 500}
DESK = dict(layers=2, heads=2, d_model=64, d_ff=128, gru_hidden=64)
ABLATION_EPOCHS = 40
SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def corpus():
    graphs = sample_graphs(4000, seed=11, profile="mscoco")
    return generate_dataset(graphs, GenConfig(seed=3), TEMPLATES, SIM, SPLITS)


# ---------------------------------------------------------------- criterion 1

def test_c01_gradient_fidelity(verdict):
    t0 = time.process_time()
    worst = {}
    with T.default_dtype(np.float64):
        rng = np.random.Generator(np.random.PCG64(1234))
        for name, (op, shapes) in sorted(PRIMITIVES.items()):
            xs = [T.Tensor(rng.normal(size=s), requires_grad=True) for s in shapes]
            if name == "relu":
                xs[0].data = np.where(np.abs(xs[0].data) < 0.1, 0.5, xs[0].data)
            proj = T.Tensor(rng.normal(size=op(*xs).shape))
            worst[name] = T.grad_check(lambda *a: T.tsum(op(*a) * proj), xs)
        logits = T.Tensor(rng.normal(size=(2, 3, 5)), requires_grad=True)
        worst["cross_entropy"] = T.grad_check(lambda x: T.cross_entropy(x, np.array([[0, 4, 2], [1, 1, 3]])),
                                              [logits])
        # micro model: d=8, one layer, one head, 3-node graph, 4-token query
        src = SceneGraph.from_triplets(["man", "shirt", "red"],
                                       [("man", "wearing", "shirt"), ("shirt", "attribute", "red")])
        tgt = SceneGraph.from_triplets(["man", "shirt", "blue"],
                                       [("man", "wearing", "shirt"), ("shirt", "attribute", "blue")])
        inst = ModificationInstance(src, "change red to blue", tgt)
        cfg = ModelConfig(layers=1, heads=1, d_model=8, d_ff=16, gru_hidden=8)
        model = GraphModifier(cfg, *build_vocabs([inst], cfg.fusion), seed=0, dtype=np.float64)
        batch = Batch(model, [inst])
        worst["model_loss"] = T.grad_check(lambda *ps: model.loss(batch), model.parameters())
    elapsed = time.process_time() - t0
    err = max(worst.values())
    verdict(1, "gradient fidelity", err < 1e-4 and elapsed < 120,
            f"max rel err {err:.2e} (model {worst['model_loss']:.2e}), {elapsed:.0f}s CPU")


# ---------------------------------------------------------------- criterion 2

def test_c02_mask_correctness(verdict):
    rng = np.random.Generator(np.random.PCG64(77))
    graphs = [random_dag(rng, 6) for _ in range(100)]
    insts = [ModificationInstance(g, "remove the red shirt", g) for g in graphs]
    leak, dev = 0.0, 0.0
    for fusion in ("concat", "gating", "cross"):
        cfg = ModelConfig(layers=2, heads=2, d_model=16, d_ff=32, gru_hidden=16, fusion=fusion)
        model = GraphModifier(cfg, *build_vocabs(insts, fusion), seed=1, dtype=np.float64)
        model.record_attention = True
        for k in range(0, 100, 25):
            b = Batch(model, insts[k:k + 25], targets=False)
            with T.no_grad():
                model.encode(b)
            mask, valid, gp = model._layout(b)
            off = int(fusion == "gating")
            for att in model.attention_maps:
                for bi, g in enumerate(b.graphs):
                    n = len(g)
                    for i in range(n):
                        allowed = {i} | set(g.neighbors(i))
                        blocked = [off + j for j in range(n) if j not in allowed]
                        leak = max(leak, float(np.abs(att[bi, :, off + i, blocked]).max(initial=0.0)))
                    # and every padded or disallowed column is zero
                    leak = max(leak, float(np.abs(att[bi][:, ~mask[bi]]).max(initial=0.0)))
                rows = att[:, :, :, :].sum(-1)[valid[:, None, :].repeat(att.shape[1], 1)]
                dev = max(dev, float(np.abs(rows - 1.0).max()))
    verdict(2, "mask correctness", leak == 0.0 and dev <= 1e-6,
            f"max weight on non-neighbours {leak}, max |row sum - 1| {dev:.1e}")


# ---------------------------------------------------------------- criterion 3

def test_c03_memorization(verdict):
    graphs = sample_graphs(200, seed=21)
    data = generate_dataset(graphs, GenConfig(seed=21), TEMPLATES, SIM, {"train": 64, "dev": 0, "test": 0})["train"]
    t0 = time.process_time()
    logs = []
    ck = fit(data, data, ModelConfig(**DESK, fusion="cross", edge_decoder="flat"),
             TrainConfig(epochs=500, stop_at=1.0, seed=0), log=logs.append)
    acc = graph_accuracy(predict(C.to_model(ck), data), [i.target for i in data])
    elapsed = time.process_time() - t0
    verdict(3, "memorization", acc == 1.0 and ck.epoch <= 500 and elapsed < 600,
            f"train graph accuracy {acc:.3f} at epoch {ck.epoch}, {elapsed:.0f}s CPU")


# ----------------------------------------------------------- criteria 4 and 5

@pytest.fixture(scope="module")
def ablation(corpus):
    runs, cpu = {}, {}
    for fusion, edge in (("cross", "flat"), ("gating", "flat"), ("concat", "flat"), ("concat", "adjacency")):
        for seed in SEEDS:
            t0 = time.process_time()
            ck = fit(corpus["train"], corpus["dev"], ModelConfig(**DESK, fusion=fusion, edge_decoder=edge),
                     TrainConfig(epochs=ABLATION_EPOCHS, seed=seed))
            report, _ = evaluate(C.to_model(ck), corpus["test"])
            runs[fusion, edge, seed] = report
            cpu[fusion, edge, seed] = time.process_time() - t0
            print(f"  {fusion}/{edge} seed {seed}: epoch {ck.epoch} dev {ck.dev_metric:.3f} "
                  f"test acc {report.graph_accuracy:.3f} edge F1 {report.edge['f1']:.3f} "
                  f"node F1 {report.node['f1']:.3f} ({cpu[fusion, edge, seed]:.0f}s)", flush=True)
    return runs, cpu


def _mean(runs, fusion, edge, key):
    vals = [runs[fusion, edge, s].graph_accuracy if key == "acc" else runs[fusion, edge, s].edge["f1"] for s in SEEDS]
    return 100 * float(np.mean(vals))


def test_c04_fusion_ablation(ablation, corpus, verdict):
    runs, cpu = ablation
    elapsed = sum(t for (_, edge, _), t in cpu.items() if edge == "flat")
    src_mean = float(np.mean([len(i.source) for i in corpus["train"]]))
    cross, gating, concat = (_mean(runs, f, "flat", "acc") for f in ("cross", "gating", "concat"))
    ok = cross >= gating >= concat and cross - concat >= 2.0 and elapsed <= 7200 and abs(src_mean - 2.9) <= 0.1
    verdict(4, "fusion ablation", ok,
            f"graph acc cross {cross:.2f} / gating {gating:.2f} / concat {concat:.2f}, "
            f"{src_mean:.2f} source nodes, {elapsed / 60:.0f} min CPU")


def test_c05_flat_vs_adjacency(ablation, verdict):
    runs, _ = ablation
    flat, adj = _mean(runs, "concat", "flat", "f1"), _mean(runs, "concat", "adjacency", "f1")
    verdict(5, "flat vs adjacency edge F1", flat >= adj - 0.5, f"flat {flat:.2f} vs adjacency {adj:.2f}")


# ---------------------------------------------------------------- criterion 6

def test_c06_metric_oracle(verdict):
    rng = np.random.Generator(np.random.PCG64(606))
    mismatches = dup_pairs = iso_pairs = 0
    preds, golds = [], []
    for _ in range(200):
        p = random_dag(rng, 6, labels=("a", "b", "c"))
        g = shuffled(p, rng) if rng.random() < 0.3 else random_dag(rng, 6, labels=("a", "b", "c"))
        dup_pairs += len(set(p.nodes)) < len(p) or len(set(g.nodes)) < len(g)
        trip = lambda x: [(x.nodes[s], l, x.nodes[d]) for s, d, l in x.edges]
        nc, ec = node_prf(p, g), edge_prf(p, g)
        iso = isomorphic_bruteforce(p, g)
        iso_pairs += iso
        mismatches += (nc.tp, nc.fp, nc.fn) != brute_prf(p.nodes, g.nodes)
        mismatches += (ec.tp, ec.fp, ec.fn) != brute_prf(trip(p), trip(g))
        mismatches += graph_accuracy([p], [g]) != float(iso)
        preds.append(p)
        golds.append(g)
    mismatches += graph_accuracy(preds, golds) != iso_pairs / 200
    verdict(6, "metric oracle equivalence", mismatches == 0 and dup_pairs > 0 and iso_pairs > 0,
            f"{mismatches} mismatches over 200 pairs ({dup_pairs} with duplicate labels, {iso_pairs} isomorphic)")


# ---------------------------------------------------------------- criterion 7

def test_c07_multi_op_calibration_and_degradation(verdict):
    graphs = sample_graphs(4000, seed=31, profile="mscoco")
    hits = {}
    for target in (1.44, 2.01):
        P = calibrate_P(graphs, target, TEMPLATES, SIM, tau=1.0, n_samples=10_000, seed=5)
        hits[target] = (P, simulate_mean_ops(graphs, P, 1.0, TEMPLATES, SIM, 10_000, seed=99))
    P = hits[2.01][0]
    data = generate_dataset(graphs, GenConfig(P=P, seed=31), TEMPLATES, SIM,
                            {"train": 5000, "dev": 500, "test": 1000}, multi=True)
    ck = fit(data["train"], data["dev"], ModelConfig(**DESK), TrainConfig(epochs=30, seed=0))
    report, _ = evaluate(C.to_model(ck), data["test"])
    low, mid = report.bins["1-2"]["graph_accuracy"], report.bins["3-4"]["graph_accuracy"]
    calibrated = all(abs(mean - t) <= 0.15 for t, (_, mean) in hits.items())
    verdict(7, "multi-op calibration and degradation", calibrated and mid < low,
            f"mean ops {hits[1.44][1]:.3f} (P={hits[1.44][0]:.2f}), {hits[2.01][1]:.3f} (P={hits[2.01][0]:.2f}); "
            f"graph acc 1-2 ops {low:.3f} vs 3-4 ops {mid:.3f} (n={report.bins['3-4']['count']})")


# ---------------------------------------------------------------- criterion 8

def test_c08_dataset_hygiene(corpus, tmp_path, verdict):
    graphs = sample_graphs(4000, seed=11, profile="mscoco")
    sets = dict(corpus)
    sets["multi"] = generate_dataset(graphs, GenConfig(P=4.0, seed=3), TEMPLATES, SIM,
                                     {"train": 2000, "dev": 0, "test": 0}, multi=True)["train"]
    bad = sum(not (len(g) <= 5 and weakly_connected(g)) or not filter_instance(inst)
              for insts in sets.values() for inst in insts for g in (inst.source, inst.target))
    blobs = []
    for jobs in (1, 1, 3):
        again = generate_dataset(graphs, GenConfig(seed=3), TEMPLATES, SIM, SPLITS, jobs=jobs)
        parts = []
        for name in SPLITS:
            path = tmp_path / f"{name}_{len(blobs)}.jsonl"
            write_jsonl(again[name], path)
            parts.append(path.read_bytes())
        blobs.append(b"".join(parts))
    identical = len(set(blobs)) == 1
    verdict(8, "dataset hygiene", bad == 0 and identical,
            f"{bad} oversized or disconnected graphs in {sum(map(len, sets.values()))} instances; "
            f"byte-identical across runs and jobs: {identical}")


# ---------------------------------------------------------------- criterion 9

def test_c09_copy_source_delete_only(verdict):
    graphs = sample_graphs(4000, seed=12, profile="mscoco")
    data = generate_dataset(graphs, GenConfig(seed=12), TEMPLATES, SIM, {"train": 0, "dev": 0, "test": 2000},
                            kinds=("delete",))["test"]
    report = copy_source(data)
    tn = te = (0, 0, 0)
    for inst in data:
        trip = lambda x: [(x.nodes[s], l, x.nodes[d]) for s, d, l in x.edges]
        tn = tuple(a + b for a, b in zip(tn, brute_prf(inst.source.nodes, inst.target.nodes)))
        te = tuple(a + b for a, b in zip(te, brute_prf(trip(inst.source), trip(inst.target))))
    prf = lambda tp, fp, fn: (tp / (tp + fp), tp / (tp + fn), 2 * tp / (2 * tp + fp + fn))
    oracle = {"node": prf(*tn), "edge": prf(*te)}
    ok = report.node["recall"] == 1.0 and report.graph_accuracy is None and all(
        np.isclose([getattr(report, lvl)[k] for k in ("precision", "recall", "f1")], oracle[lvl], rtol=0, atol=1e-12).all()
        for lvl in oracle)
    mean_src = float(np.mean([len(i.source) for i in data]))
    verdict(9, "copy source on delete-only data", ok,
            f"node recall {report.node['recall']}, node F1 {report.node['f1']:.4f}, edge F1 {report.edge['f1']:.4f}, "
            f"{mean_src:.2f} source nodes")


# --------------------------------------------------------------- criterion 10

def test_c10_persistence(corpus, tmp_path, verdict):
    path = tmp_path / "train.jsonl"
    write_jsonl(corpus["train"], path)
    back = read_jsonl(path)
    again = tmp_path / "again.jsonl"
    write_jsonl(back, again)
    data_ok = back == corpus["train"] and path.read_bytes() == again.read_bytes()

    small = corpus["train"][:200]
    ck = fit(small, corpus["dev"][:50], ModelConfig(**DESK), TrainConfig(epochs=2, seed=0))
    C.save(ck, tmp_path / "m.gmck")
    raw = (tmp_path / "m.gmck").read_bytes()
    loaded = C.load(tmp_path / "m.gmck")
    ckpt_ok = loaded.to_bytes() == raw and all(
        loaded.params[k].tobytes() == v.tobytes() and loaded.params[k].dtype == v.dtype for k, v in ck.params.items())
    m1, m2 = C.to_model(ck), C.to_model(loaded)
    ckpt_ok &= predict(m1, corpus["dev"][:50]) == predict(m2, corpus["dev"][:50])

    rng = np.random.Generator(np.random.PCG64(10))
    corruptions = [raw[:k] for k in (0, 10, len(raw) // 2, len(raw) - 1)] + [raw + b"x", b"NOPE" + raw[4:]]
    for pos in rng.integers(0, len(raw), size=20):
        flipped = bytearray(raw)
        flipped[int(pos)] ^= 1 << int(rng.integers(8))
        corruptions.append(bytes(flipped))
    rejected = 0
    for blob in corruptions:
        try:
            Checkpoint.from_bytes(blob)
        except CorruptCheckpoint:
            rejected += 1
    verdict(10, "persistence", data_ok and ckpt_ok and rejected == len(corruptions),
            f"dataset round-trip {data_ok}, checkpoint round-trip {ckpt_ok}, "
            f"{rejected}/{len(corruptions)} corrupted files rejected with CorruptCheckpoint")
