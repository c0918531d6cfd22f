"""Teacher-forced maximum-likelihood training with best-dev checkpoint selection."""
from __future__ import annotations

import json
import math
import sys
import time
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from . import tensor as T
from .datagen.dataset import mixed_batches, stream
from .evaluation import predict, graph_accuracy
from .model import Batch, GraphModifier, ModelConfig, build_vocabs


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 30
    lr: float = 1e-3
    clip: float = 1.0
    seed: int = 0
    mix: bool = False
    lr_decay: float = 1.0       # multiplicative, applied after every epoch
    min_count: int = 1          # vocabulary cutoff
    stop_at: float | None = None  # stop once dev graph accuracy reaches this value
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.batch_size <= 0 or self.epochs <= 0 or self.min_count <= 0:
            raise ValueError("batch_size, epochs and min_count must be positive")
        if not (self.lr > 0 and self.clip > 0 and 0 < self.lr_decay <= 1):
            raise ValueError("lr and clip must be positive, lr_decay in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params: Sequence[T.Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def clip_grad_norm(params: Sequence[T.Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / (norm + 1e-12)
    return norm


def train_step(model: GraphModifier, opt: Adam, instances, clip: float):
    """One update; returns the batch's summed node and edge NLL."""
    for p in model.parameters():
        p.grad = None
    batch = Batch(model, instances)
    node_nll, edge_nll = model.loss_terms(batch)
    loss = T.scale(node_nll + edge_nll, 1.0 / batch.B)
    if not np.isfinite(loss.data):
        raise DivergenceError(f"non-finite loss {float(loss.data)}")
    T.backward(loss)
    clip_grad_norm(model.parameters(), clip)
    opt.step()
    return float(node_nll.data), float(edge_nll.data)


def json_logger(stream_=None) -> Callable[[dict], None]:
    out = stream_ or sys.stdout

    def log(record: dict) -> None:
        out.write(json.dumps(record, sort_keys=True) + "\n")
        out.flush()

    return log


def fit(train: Sequence, dev: Sequence, model_config: ModelConfig, train_config: TrainConfig,
        user: Sequence | None = None, log: Callable[[dict], None] | None = None,
        dtype=np.float32) -> ckpt_io.Checkpoint:
    """Train from scratch; return the checkpoint with the best dev graph accuracy.

    With ``train_config.mix`` every batch pairs synthetic and ``user``
    instances 1:1.  Ties in dev accuracy keep the earlier epoch.
    """
    tc = train_config
    if not train or not dev:
        raise ValueError("train and dev sets must be nonempty")
    if tc.mix and not user:
        raise ValueError("mixing needs a nonempty user set")
    vocab_source = list(train) + (list(user) if tc.mix else [])
    node_v, query_v, edge_v = build_vocabs(vocab_source, model_config.fusion, tc.min_count)
    model = GraphModifier(model_config, node_v, query_v, edge_v, seed=tc.seed, dtype=dtype)
    opt = Adam(model.parameters(), lr=tc.lr)
    best: ckpt_io.Checkpoint | None = None
    for epoch in range(1, tc.epochs + 1):
        rng = stream(tc.seed, 0x7A1, epoch)
        if tc.mix:
            batches = list(mixed_batches(train, user, tc.batch_size, rng))
        else:
            order = rng.permutation(len(train))
            batches = [[train[i] for i in order[k:k + tc.batch_size]] for k in range(0, len(train), tc.batch_size)]
        t0 = time.perf_counter()
        node_sum = edge_sum = 0.0
        seen = 0
        for batch in batches:
            n, e = train_step(model, opt, batch, tc.clip)
            node_sum += n
            edge_sum += e
            seen += len(batch)
        preds = predict(model, dev, tc.eval_batch_size)
        acc = graph_accuracy(preds, [inst.target for inst in dev])
        improved = best is None or acc > best.dev_metric
        if improved:
            best = ckpt_io.from_model(model, epoch, acc, tc.to_dict())
        if log:
            log({"epoch": epoch, "loss": (node_sum + edge_sum) / seen, "loss_node": node_sum / seen,
                 "loss_edge": edge_sum / seen, "dev_graph_accuracy": acc, "best": improved,
                 "lr": opt.lr, "seconds": round(time.perf_counter() - t0, 3)})
        if tc.stop_at is not None and acc >= tc.stop_at:
            break
        opt.lr *= tc.lr_decay
    return best
