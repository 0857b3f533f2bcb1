"""Training orchestration for the classification and triplet regimes.

Both regimes share the batch pipeline, the SGD step, newline-delimited JSON
metrics, and checkpointing of the last and best-validation states.  Triplet
batches pack anchors, positives, and negatives of batch_size/3 triplets as
samples (3i, 3i+1, 3i+2) of one merged forward pass, so the gradients of all
three roles accumulate into the same parameters.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .dataset import (BatchPlan, Corpus, VoxelCache, make_batches, sample_rng,
                      sample_triplet, split_validation)
from .errors import DataError, DivergenceError
from .grid import merge_batch
from .losses import softmax_nll_batch, triplet_loss_backward
from .network import Network, NetworkSpec, build, save_checkpoint
from .optim import SgdState, lr_at_epoch, sgd_step
from .retrieval import EmbeddingSet, evaluate
from .voxelizer import RenderConfig

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    task: str = "classify"            # "classify" | "triplet"
    epochs: int = 200
    batch_size: int = 45
    lr0: float = 0.002
    momentum: float = 0.99
    lr_decay: float = 0.985
    margin: float = 0.2
    seed: int = 0
    resolution: int = 40
    pad_to: int = 126
    augment: bool = True
    jitter: int = 2
    val_fraction: float = 0.1
    val_interval: int = 5
    threads: int = 1
    start_epoch: int = 0

    def render_config(self) -> RenderConfig:
        return RenderConfig(self.resolution, self.pad_to,
                            translation_jitter=self.jitter if self.augment else 0)


@dataclass
class TrainResult:
    network: Network
    history: list[dict]
    best_metric: float
    checkpoint_last: str | None = None
    checkpoint_best: str | None = None


class MetricsLog:
    """Appends one JSON object per line; content is deterministic."""

    def __init__(self, path=None):
        self.path = path
        self.records: list[dict] = []
        if path is not None:
            open(path, "w").close()

    def write(self, **record):
        clean = {k: v for k, v in record.items() if v is not None}
        self.records.append(clean)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(clean, sort_keys=True) + "\n")


def _check_finite(loss: float, epoch: int, step: int):
    if not math.isfinite(loss):
        raise DivergenceError(
            f"non-finite loss {loss} at epoch {epoch} step {step}; "
            "try a lower learning rate")


def _save(net: Network, path, cfg: TrainConfig, epoch: int):
    if path is None:
        return None
    meta = {"task": cfg.task, "epoch": epoch, "seed": cfg.seed,
            "lr0": cfg.lr0, "momentum": cfg.momentum, "decay": cfg.lr_decay,
            "margin": cfg.margin, "resolution": cfg.resolution}
    save_checkpoint(net, path, meta=meta)
    return str(path)


def train_classification(corpus: Corpus, spec: NetworkSpec, cfg: TrainConfig,
                         ckpt_path=None, best_path=None, log_path=None,
                         net: Network | None = None) -> TrainResult:
    """SGD on softmax cross-entropy with per-epoch decayed learning rate."""
    if not spec.has_head:
        raise ValueError("classification training needs a classifier head")
    train_c, val_c = split_validation(corpus, cfg.val_fraction, cfg.seed)
    if len(train_c) == 0:
        raise DataError("empty training corpus")
    net = net if net is not None else build(spec, seed=cfg.seed)
    sgd = SgdState(cfg.lr0, cfg.momentum, cfg.lr_decay)
    render = cfg.render_config()
    train_cache = VoxelCache(train_c, render)
    val_cache = VoxelCache(val_c, render)
    mlog = MetricsLog(log_path)
    best = -1.0
    best_file = None
    total_steps = 0
    for epoch in range(cfg.start_epoch, cfg.epochs):
        lr = lr_at_epoch(sgd, epoch)
        plan = BatchPlan(cfg.batch_size, seed=cfg.seed, epoch=epoch)
        losses, correct, seen = [], 0, 0
        for step, (batch, labels, _) in enumerate(
                make_batches(train_c, plan, train_cache,
                             augment_samples=cfg.augment, threads=cfg.threads)):
            logits = net.forward_logits(batch)
            loss, grad = softmax_nll_batch(logits, labels)
            _check_finite(loss, epoch, step)
            net.zero_grad()
            net.backward_from_logits(grad)
            sgd_step(net.parameters(), net.gradients(), sgd, lr)
            losses.append(loss)
            correct += int((logits.argmax(axis=1) == labels).sum())
            seen += len(labels)
            total_steps += 1
            mlog.write(epoch=epoch, step=total_steps, loss=loss, lr=lr)
        train_acc = correct / seen if seen else 0.0
        mlog.write(epoch=epoch, step=total_steps, split="train",
                   loss=float(np.mean(losses)) if losses else None,
                   acc=train_acc, lr=lr)
        run_val = (len(val_c) > 0 and
                   ((epoch + 1) % cfg.val_interval == 0 or epoch == cfg.epochs - 1))
        if run_val:
            val_acc = _split_accuracy(net, val_c, val_cache, cfg)
            mlog.write(epoch=epoch, step=total_steps, split="val",
                       acc=val_acc, lr=lr)
            if val_acc > best:
                best = val_acc
                if best_path is not None:
                    best_file = _save(net, best_path, cfg, epoch)
    last_file = _save(net, ckpt_path, cfg, cfg.epochs - 1)
    return TrainResult(net, mlog.records, best, last_file, best_file)


def _split_accuracy(net: Network, subset: Corpus, cache: VoxelCache,
                    cfg: TrainConfig) -> float:
    correct, seen = 0, 0
    plan = BatchPlan(cfg.batch_size, seed=cfg.seed, epoch=0)
    for batch, labels, _ in make_batches(subset, plan, cache,
                                         augment_samples=False,
                                         threads=cfg.threads):
        logits = net.forward_logits(batch)
        correct += int((logits.argmax(axis=1) == labels).sum())
        seen += len(labels)
    return correct / seen if seen else 0.0


def train_triplet(corpus: Corpus, spec: NetworkSpec, cfg: TrainConfig,
                  ckpt_path=None, best_path=None, log_path=None,
                  net: Network | None = None) -> TrainResult:
    """Triplet ranking loss on cosine distances over shared-weight forwards."""
    train_c, val_c = split_validation(corpus, cfg.val_fraction, cfg.seed)
    sizes = [len(m) for m in train_c.by_class()]
    if sum(1 for n in sizes if n >= 2) < 1 or sum(1 for n in sizes if n >= 1) < 2:
        raise DataError("triplet training needs >=2 classes and an anchor "
                        "class with >=2 samples")
    net = net if net is not None else build(spec, seed=cfg.seed)
    sgd = SgdState(cfg.lr0, cfg.momentum, cfg.lr_decay)
    render = cfg.render_config()
    train_cache = VoxelCache(train_c, render)
    val_cache = VoxelCache(val_c, render)
    mlog = MetricsLog(log_path)
    n_triplets = max(1, cfg.batch_size // 3)
    steps_per_epoch = max(1, math.ceil(len(train_c) / cfg.batch_size))
    best = -1.0
    best_file = None
    total_steps = 0
    for epoch in range(cfg.start_epoch, cfg.epochs):
        lr = lr_at_epoch(sgd, epoch)
        trip_rng = np.random.default_rng([cfg.seed, epoch, 0x7121])
        losses, satisfied, used = [], 0, 0
        for step in range(steps_per_epoch):
            triplets = [sample_triplet(train_c, trip_rng)
                        for _ in range(n_triplets)]
            members = []
            for t in triplets:
                members += [t.anchor, t.positive, t.negative]
            grids = []
            for slot, idx in enumerate(members):
                rng = sample_rng(cfg.seed, epoch * steps_per_epoch + step,
                                 slot * 1000003 + idx)
                grids.append(train_cache.render(idx, rng=rng,
                                                with_rotation=cfg.augment,
                                                with_jitter=cfg.augment))
            if any(g is None for g in grids):
                log.warning("dropping step %d: unreadable member mesh", step)
                continue
            batch = merge_batch(grids)
            emb = net.embed(batch)
            upstream = np.zeros_like(emb)
            norms = np.linalg.norm(emb, axis=1)
            step_losses = []
            for t_i in range(len(triplets)):
                a, p, n = 3 * t_i, 3 * t_i + 1, 3 * t_i + 2
                if norms[a] == 0 or norms[p] == 0 or norms[n] == 0:
                    log.warning("skipping triplet with a zero-norm embedding")
                    continue
                loss, g_a, g_p, g_n = triplet_loss_backward(
                    emb[a], emb[p], emb[n], cfg.margin)
                step_losses.append(loss)
                upstream[a] += g_a
                upstream[p] += g_p
                upstream[n] += g_n
            if not step_losses:
                continue
            upstream /= len(step_losses)
            mean_loss = float(np.mean(step_losses))
            _check_finite(mean_loss, epoch, step)
            net.zero_grad()
            net.backward_from_embedding(upstream)
            sgd_step(net.parameters(), net.gradients(), sgd, lr)
            losses.append(mean_loss)
            satisfied += sum(1 for v in step_losses if v == 0.0)
            used += len(step_losses)
            total_steps += 1
            mlog.write(epoch=epoch, step=total_steps, loss=mean_loss, lr=lr)
        frac = satisfied / used if used else 0.0
        mlog.write(epoch=epoch, step=total_steps, split="train",
                   loss=float(np.mean(losses)) if losses else None,
                   satisfied=frac, lr=lr)
        run_val = (len(val_c) > 0 and
                   ((epoch + 1) % cfg.val_interval == 0 or epoch == cfg.epochs - 1))
        if run_val:
            val_map = embedding_map(net, val_c, val_cache, cfg)
            mlog.write(epoch=epoch, step=total_steps, split="val",
                       map=val_map, lr=lr)
            if val_map is not None and val_map > best:
                best = val_map
                if best_path is not None:
                    best_file = _save(net, best_path, cfg, epoch)
    last_file = _save(net, ckpt_path, cfg, cfg.epochs - 1)
    return TrainResult(net, mlog.records, best, last_file, best_file)


def embedding_map(net: Network, subset: Corpus, cache: VoxelCache,
                  cfg: TrainConfig) -> float | None:
    """Leave-query-out retrieval mAP over the unaugmented subset."""
    plan = BatchPlan(cfg.batch_size, seed=cfg.seed, epoch=0)
    ids, labels, vecs = [], [], []
    for batch, labs, idxs in make_batches(subset, plan, cache,
                                          augment_samples=False,
                                          threads=cfg.threads):
        emb = net.embed(batch)
        for row, lab, idx in zip(emb, labs, idxs):
            ids.append(subset.samples[idx].path)
            labels.append(int(lab))
            vecs.append(row)
    if len(ids) < 2:
        return None
    emb_set = EmbeddingSet(ids, np.array(vecs), np.array(labels))
    try:
        return evaluate(emb_set).map
    except (DataError, ValueError):
        return None


def train(corpus: Corpus, spec: NetworkSpec, cfg: TrainConfig, **paths
          ) -> TrainResult:
    if cfg.task == "classify":
        return train_classification(corpus, spec, cfg, **paths)
    if cfg.task == "triplet":
        return train_triplet(corpus, spec, cfg, **paths)
    raise ValueError(f"unknown task {cfg.task!r}")
