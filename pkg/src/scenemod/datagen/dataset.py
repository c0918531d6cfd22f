"""Train/dev/test corpora, multi-op calibration and the 1:1 mixing sampler."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from typing import Iterator, Mapping, Sequence

import numpy as np

from ..graph import SceneGraph, canonical
from .instances import (ACTIONS, GenConfig, ModificationInstance, TooSmall, filter_instance,
                        gen_multi, gen_single)
from .similarity import NoSimilarLabel, SimilarityTable
from .templates import Template

SPLITS = ("train", "dev", "test")
MAX_PASSES = 16
ATTEMPTS = 20


class InsufficientGraphs(RuntimeError):
    pass


class EmptySet(ValueError):
    pass


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent PCG64 stream for ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


def _one(G, cfg, templates, sim, kinds, multi, rng):
    for _ in range(ATTEMPTS):
        try:
            if multi:
                inst = gen_multi(G, cfg, templates, sim, rng)
            else:
                inst = gen_single(G, kinds, templates, sim, rng)
        except (TooSmall, NoSimilarLabel):
            continue
        if filter_instance(inst, cfg.max_nodes):
            return inst
    return None


def _work(args):
    graphs, keys, cfg, templates, sim, kinds, multi = args
    return [_one(graphs[g], cfg, templates, sim, kinds, multi, stream(cfg.seed, g, p)) for g, p in keys]


def _pools(n_graphs: int, sizes: Mapping[str, int], seed: int) -> dict[str, list[int]]:
    perm = [int(i) for i in stream(seed).permutation(n_graphs)]
    total = sum(sizes.values())
    pools, start = {}, 0
    names = [s for s in SPLITS if sizes.get(s, 0) > 0]
    for k, name in enumerate(names):
        share = n_graphs - start if k == len(names) - 1 else int(n_graphs * sizes[name] / total)
        pools[name] = perm[start:start + share]
        start += share
    return pools


def generate_dataset(graphs: Sequence[SceneGraph], cfg: GenConfig, templates: Mapping[str, Sequence[Template]],
                     sim: SimilarityTable, split_sizes: Mapping[str, int], kinds: Sequence[str] = ACTIONS,
                     multi: bool = False, jobs: int = 1, chunk: int = 256) -> dict[str, list[ModificationInstance]]:
    """Splits disjoint by base graph; fully determined by ``cfg.seed``.

    Each split walks its pool of graphs repeatedly (pass ``p``); candidate
    ``(graph, p)`` draws from its own stream, so results do not depend on
    ``jobs``.  Rejected draws are resampled up to a fixed number of attempts.
    Base graphs are first stored in canonical node order, so the source-order
    tie-break of target sequences depends only on graph content.
    """
    graphs = [canonical(g) for g in graphs]
    for k in kinds:
        if k not in ACTIONS:
            raise ValueError(f"unknown operation {k!r}")
    pools = _pools(len(graphs), split_sizes, cfg.seed)
    out: dict[str, list[ModificationInstance]] = {}
    executor = ProcessPoolExecutor(jobs) if jobs > 1 else None
    try:
        for name in SPLITS:
            want = split_sizes.get(name, 0)
            if want <= 0:
                out[name] = []
                continue
            pool = pools[name]
            if not pool:
                raise InsufficientGraphs(f"no graphs left for split {name!r}")
            keys = [(g, p) for p in range(MAX_PASSES) for g in pool]
            got: list[ModificationInstance] = []
            pos = 0
            while len(got) < want and pos < len(keys):
                step = chunk * max(jobs, 1)
                batch = keys[pos:pos + step]
                pos += step
                parts = [batch[i:i + chunk] for i in range(0, len(batch), chunk)]
                args = [(graphs, part, cfg, templates, sim, kinds, multi) for part in parts]
                results = executor.map(_work, args) if executor else map(_work, args)
                for part in results:
                    got.extend(inst for inst in part if inst is not None)
            if len(got) < want:
                raise InsufficientGraphs(f"split {name!r}: only {len(got)} of {want} instances")
            out[name] = got[:want]
    finally:
        if executor:
            executor.shutdown()
    return out


def simulate_mean_ops(graphs: Sequence[SceneGraph], P: float, tau: float, templates, sim,
                      n_samples: int = 10_000, seed: int = 0) -> float:
    """Average number of edits per raw (unfiltered) multi-op draw."""
    cfg = GenConfig(P=P, tau=tau, seed=seed)
    eligible = [g for g in graphs if len(g) >= 2]
    if not eligible:
        raise InsufficientGraphs("need graphs with at least 2 nodes")
    pick = stream(seed, 0xCA1)
    total = 0
    for k in range(n_samples):
        G = eligible[int(pick.integers(len(eligible)))]
        total += len(gen_multi(G, cfg, templates, sim, stream(seed, 1, k)).ops)
    return total / n_samples


def calibrate_P(graphs, target_mean: float, templates, sim, tau: float = 1.0, n_samples: int = 10_000,
                seed: int = 0, lo: float = 1e-3, hi: float = 1e3, iters: int = 24) -> float:
    """Bisection in log-space for the ``P`` whose simulated mean hits the target.

    Mean operations decrease as ``P`` grows; every evaluation reuses the same
    random streams.
    """
    f = lambda P: simulate_mean_ops(graphs, P, tau, templates, sim, n_samples, seed)
    if f(lo) < target_mean or f(hi) > target_mean:
        raise ValueError(f"target mean {target_mean} outside the reachable range for P in [{lo}, {hi}]")
    a, b = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if f(math.exp(mid)) > target_mean:
            a = mid
        else:
            b = mid
    return math.exp(0.5 * (a + b))


def mixed_batches(synthetic: Sequence, user: Sequence, batch_size: int, rng: np.random.Generator,
                  n_batches: int | None = None) -> Iterator[list]:
    """Batches of ceil(b/2) synthetic + floor(b/2) user instances.

    Synthetic data is walked in shuffled passes; user data is up-sampled with
    replacement.  By default one pass over the synthetic set is produced.
    """
    if not synthetic or not user:
        raise EmptySet("both synthetic and user sets must be nonempty")
    n_syn = (batch_size + 1) // 2
    n_user = batch_size // 2
    if n_batches is None:
        n_batches = math.ceil(len(synthetic) / n_syn)
    order: list[int] = []
    for _ in range(n_batches):
        while len(order) < n_syn:
            order += [int(i) for i in rng.permutation(len(synthetic))]
        take, order = order[:n_syn], order[n_syn:]
        extra = [int(i) for i in rng.integers(len(user), size=n_user)]
        yield [synthetic[i] for i in take] + [user[i] for i in extra]
