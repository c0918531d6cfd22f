"""Command-line entry point: corpus, generate, train, eval, infer.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__

SPLIT_FILES = ("train", "dev", "test")


def _add_corpus(sub):
    p = sub.add_parser("corpus", help="sample base scene graphs (JSONL)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--profile", default="mscoco", help="node-count profile: mscoco or gcc")
    p.add_argument("--attr-rate", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def _add_generate(sub):
    p = sub.add_parser("generate", help="build train/dev/test modification triplets")
    p.add_argument("--graphs", required=True, help="JSONL of base scene graphs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--train", type=int, default=0)
    p.add_argument("--dev", type=int, default=0)
    p.add_argument("--test", type=int, default=0)
    p.add_argument("--ops", default="insert,delete,substitute", help="single-op kinds, comma separated")
    p.add_argument("--multi", action="store_true", help="multi-operation instances")
    p.add_argument("--mean-ops", type=float, default=None, help="calibrate P to hit this mean")
    p.add_argument("--P", type=float, default=1.0, help="terminate weight (multi-op)")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--calib-samples", type=int, default=10_000)
    p.add_argument("--max-nodes", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)


def _add_train(sub):
    p = sub.add_parser("train", help="fit a model and save the best-dev checkpoint")
    p.add_argument("--data", required=True, help="directory with train.jsonl and dev.jsonl")
    p.add_argument("--fusion", choices=("concat", "gating", "cross"), default="cross")
    p.add_argument("--edge-decoder", choices=("adjacency", "flat"), default="flat")
    p.add_argument("--config", default=None, help="key=value file of model/training fields")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--mix", default=None, metavar="USER_DIR", help="mix 1:1 with USER_DIR/train.jsonl")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--report-dir", default=None, help="write loss curves and tables here")


def _add_eval(sub):
    p = sub.add_parser("eval", help="score a checkpoint, a predictions file or Copy Source")
    p.add_argument("--data", required=True, help="JSONL of instances")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--predictions", help="JSONL of predicted graphs (null for none), aligned with --data")
    src.add_argument("--copy-source", action="store_true")
    p.add_argument("--bins", action="store_true", help="also print the per-edit-count table")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--save-predictions", default=None)
    p.add_argument("--report-dir", default=None, help="write JSON, TSV and PNG figures here")


def _add_infer(sub):
    p = sub.add_parser("infer", help="modify one source graph with a query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True, help="JSON file with a graph or an instance record")
    p.add_argument("--query", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenemod", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_corpus, _add_generate, _add_train, _add_eval, _add_infer):
        add(sub)
    return parser


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def cmd_corpus(args):
    from .datagen import sample_graphs, write_graphs

    graphs = sample_graphs(args.n, args.seed, args.profile, args.attr_rate)
    write_graphs(graphs, args.out)
    _emit({"graphs": len(graphs), "mean_nodes": float(np.mean([len(g) for g in graphs])), "out": args.out})


def cmd_generate(args):
    from .datagen import (GenConfig, SimilarityTable, calibrate_P, generate_dataset, load_templates,
                          read_graphs, write_jsonl)

    graphs = read_graphs(args.graphs)
    templates = load_templates()
    sim = SimilarityTable.default()
    P = args.P
    if args.mean_ops is not None:
        if not args.multi:
            raise ValueError("--mean-ops needs --multi")
        P = calibrate_P(graphs, args.mean_ops, templates, sim, args.tau, args.calib_samples, args.seed)
    cfg = GenConfig(P=P, tau=args.tau, max_nodes=args.max_nodes, seed=args.seed)
    kinds = tuple(k.strip() for k in args.ops.split(",") if k.strip())
    sizes = {"train": args.train, "dev": args.dev, "test": args.test}
    data = generate_dataset(graphs, cfg, templates, sim, sizes, kinds, args.multi, args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in SPLIT_FILES:
        if sizes[name]:
            write_jsonl(data[name], out / f"{name}.jsonl")
    meta = {"P": P, "tau": args.tau, "multi": args.multi, "ops": list(kinds), "seed": args.seed,
            "sizes": sizes, "mean_ops": {n: float(np.mean([len(i.ops) for i in d])) for n, d in data.items() if d}}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    _emit(meta)


def cmd_train(args):
    from .checkpoint import save
    from .config import load_config
    from .datagen import read_jsonl
    from .model import ModelConfig
    from .training import TrainConfig, fit

    model_kw, train_kw = load_config(args.config) if args.config else ({}, {})
    model_kw.update(fusion=args.fusion, edge_decoder=args.edge_decoder)
    if args.seed is not None:
        train_kw["seed"] = args.seed
    if args.epochs is not None:
        train_kw["epochs"] = args.epochs
    user = None
    if args.mix:
        train_kw["mix"] = True
        user = read_jsonl(Path(args.mix) / "train.jsonl")
    data = Path(args.data)
    train, dev = read_jsonl(data / "train.jsonl"), read_jsonl(data / "dev.jsonl")
    history = []

    def log(rec):
        history.append(rec)
        _emit(rec)

    ckpt = fit(train, dev, ModelConfig(**model_kw), TrainConfig(**train_kw), user=user, log=log)
    save(ckpt, args.out)
    if args.report_dir:
        from .reporting import write_training_report

        write_training_report(history, args.report_dir)
    _emit({"checkpoint": args.out, "epoch": ckpt.epoch, "dev_graph_accuracy": ckpt.dev_metric})


def _read_predictions(path):
    from .graph import SceneGraph

    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            obj = json.loads(line)
            if isinstance(obj, dict) and "target" in obj and "nodes" not in obj:
                obj = obj["target"]
            out.append(None if obj is None else SceneGraph.from_dict(obj))
    return out


def cmd_eval(args):
    from .datagen import read_jsonl
    from .evaluation import copy_source, evaluate, score

    data = read_jsonl(args.data)
    name = "eval"
    preds = None
    if args.copy_source:
        report = copy_source(data)
        name = "copy_source"
    elif args.predictions:
        preds = _read_predictions(args.predictions)
        report = score(preds, data)
    else:
        from .checkpoint import load, to_model

        model = to_model(load(args.checkpoint))
        report, preds = evaluate(model, data, args.batch_size, args.jobs)
    if args.save_predictions and preds is not None:
        with open(args.save_predictions, "w", encoding="utf-8") as fh:
            for g in preds:
                fh.write(json.dumps(None if g is None else g.to_dict()) + "\n")
    _emit(report.to_dict())
    if args.bins:
        sys.stdout.write(report.table(name) + "\n")
    if args.report_dir:
        from .reporting import write_eval_report

        write_eval_report(report, args.report_dir, name)


def cmd_infer(args):
    from .checkpoint import load, to_model
    from .graph import SceneGraph

    obj = json.loads(Path(args.source).read_text(encoding="utf-8"))
    source = SceneGraph.from_dict(obj["source"] if "source" in obj else obj)
    model = to_model(load(args.checkpoint))
    target = model.generate(source, args.query)
    _emit({"source": source.to_dict(), "query": args.query, "target": target.to_dict()})


COMMANDS = {"corpus": cmd_corpus, "generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "infer": cmd_infer}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, RuntimeError, TypeError) as e:
        sys.stderr.write(f"scenemod {args.command}: error: {e}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
