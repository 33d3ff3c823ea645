"""Data preparation and the two training phases."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..diffcore import ops as T
from ..diffcore.graph import grad
from ..diffcore.optim import sgd_step
from ..diffcore.tensor import Tensor
from ..featurepipe import (EncodedData, FeatureError, FeatureStats, fit_stats, index_batches,
                           read_cache, read_csv, transform_rows)
from .config import Config
from .metrics import MetricsWriter, evaluate_auc
from .synth import read_segment_features
from .system import USSR

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    stats: FeatureStats
    train: EncodedData
    val: EncodedData | None
    test: EncodedData | None
    segment_features: dict[int, np.ndarray] | None


def load_dataset(path: str | Path, stats: FeatureStats) -> EncodedData:
    """Encoded cache (``.enc``) or raw CSV."""
    path = Path(path)
    if path.suffix == ".enc":
        return read_cache(path)
    return transform_rows(read_csv(path), stats)


def prepare(config: Config, stats: FeatureStats | None = None) -> Prepared:
    """Fit feature statistics on the training CSV (or reuse ``stats``) and encode every split."""
    if not config.train_path:
        raise FeatureError("config has no train_path")
    seg = read_segment_features(config.segments_path) if config.segments_path else None
    if stats is not None:
        load = lambda p: load_dataset(p, stats) if p else None
        return Prepared(stats, load(config.train_path), load(config.val_path), load(config.test_path), seg)
    train_rows = read_csv(config.train_path)
    test_rows = read_csv(config.test_path) if config.test_path else []
    fit_rows = train_rows + test_rows if config.joint_index else train_rows
    stats = fit_stats(fit_rows, config.cap, config.embed_dim)
    train = transform_rows(train_rows, stats)
    val = load_dataset(config.val_path, stats) if config.val_path else None
    test = transform_rows(test_rows, stats) if test_rows else None
    return Prepared(stats, train, val, test, seg)


def build_model(config: Config, prepared: Prepared) -> USSR:
    n_segments = int(prepared.train.segment.max()) + 1 if len(prepared.train) else 0
    model = USSR.build(config, prepared.stats, n_segments, prepared.segment_features)
    config.log_resolved()
    return model


def _safe_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    try:
        return evaluate_auc(scores, labels)
    except ValueError:
        return float("nan")


class _EarlyStopper:
    def __init__(self, model: USSR, names: list[str], patience: int):
        self.model, self.names, self.patience = model, names, patience
        self.best = -np.inf
        self.best_arrays = {n: model.store[n].data for n in names}
        self.bad = 0

    def update(self, val_auc: float) -> bool:
        """Record an epoch; returns True when training should stop."""
        if np.isnan(val_auc) or val_auc > self.best:
            if not np.isnan(val_auc):
                self.best = val_auc
            self.best_arrays = {n: self.model.store[n].data for n in self.names}
            self.bad = 0
            return False
        self.bad += 1
        return self.patience > 0 and self.bad >= self.patience

    def restore(self) -> None:
        for n, a in self.best_arrays.items():
            self.model.store[n].data = a


def train_universal(model: USSR, train: EncodedData, val: EncodedData | None = None,
                    metrics: MetricsWriter | None = None, epochs: int | None = None) -> list[float]:
    """Phase 1: minimise the negated mixture bound. Returns per-epoch losses (epoch 0 = initial)."""
    cfg = model.config
    epochs = cfg.epochs_universal if epochs is None else epochs
    metrics = metrics or MetricsWriter()
    uni = model.universal
    names = uni.param_names()
    params = {n: model.store[n] for n in names}
    start = time.perf_counter()
    losses = [_mean_elbo(model, train)]
    val_auc = _safe_auc(model.predict_universal(val), val.label) if val is not None and len(val) else float("nan")
    metrics.write(0, "universal", losses[0], val_auc, time.perf_counter() - start)
    stopper = _EarlyStopper(model, names, cfg.patience)
    for epoch in range(1, epochs + 1):
        total, count = 0.0, 0
        for rows in index_batches(len(train), cfg.batch_size, int(model.rng.integers(2**31))):
            loss = uni.elbo_loss(train[rows], model.rng)
            sgd_step(params, grad(loss, params), cfg.learning_rate, cfg.clip)
            total += loss.item() * len(rows)
            count += len(rows)
        losses.append(total / count)
        val_auc = _safe_auc(model.predict_universal(val), val.label) if val is not None and len(val) else float("nan")
        metrics.write(epoch, "universal", losses[-1], val_auc, time.perf_counter() - start)
        log.info("universal epoch %d loss %.5f val_auc %.4f", epoch, losses[-1], val_auc)
        if val is not None and stopper.update(val_auc):
            log.info("early stop after epoch %d (best val_auc %.4f)", epoch, stopper.best)
            break
    if val is not None and epochs:
        stopper.restore()
    return losses


def _mean_elbo(model: USSR, data: EncodedData, batch_size: int = 4096) -> float:
    """Initial objective value; uses its own generator so training noise is unaffected."""
    rng = np.random.default_rng(model.config.seed + 1)
    total = 0.0
    for i in range(0, len(data), batch_size):
        part = data[np.arange(i, min(i + batch_size, len(data)))]
        total += float(model.universal.elbo_terms(part, rng).data.sum())
    return total / max(len(data), 1)


def train_segments(model: USSR, train: EncodedData, val: EncodedData | None = None,
                   metrics: MetricsWriter | None = None, epochs: int | None = None) -> list[float]:
    """Phase 2: segment-path cross-entropy; the universal part is frozen unless
    ``joint_finetune`` is set.  Ends by storing every segment representation."""
    cfg = model.config
    epochs = cfg.epochs_segments if epochs is None else epochs
    metrics = metrics or MetricsWriter()
    bip, uni = model.bipartite, model.universal
    names = bip.trainable_names() + (uni.param_names() if cfg.joint_finetune else [])
    params = {n: model.store[n] for n in names}
    start = time.perf_counter()
    zbar_train = None if cfg.joint_finetune else model.universal_repr(train)

    def batch_loss(rows, rng):
        batch = train[rows]
        if cfg.joint_finetune:
            z = T.concat([T.reshape(model.store[f"prior{k}.mu"], (1, uni.latent_dim))
                          for k in range(uni.n_clusters)], axis=0)
            return bip.segment_loss(batch, uni.repr_tensor(batch), z, rng)
        return bip.segment_loss(batch, zbar_train[rows], uni.cluster_means(), rng)

    def val_auc():
        if val is None or not len(val):
            return float("nan")
        return _safe_auc(model.predict(val), val.label)

    losses = [_mean_loss(batch_loss, len(train), cfg.batch_size)]
    metrics.write(0, "segments", losses[0], val_auc(), time.perf_counter() - start)
    stopper = _EarlyStopper(model, names, cfg.patience)
    for epoch in range(1, epochs + 1):
        total, count = 0.0, 0
        for rows in index_batches(len(train), cfg.batch_size, int(model.rng.integers(2**31))):
            loss = batch_loss(rows, model.rng)
            sgd_step(params, grad(loss, params), cfg.learning_rate, cfg.clip)
            total += loss.item() * len(rows)
            count += len(rows)
        losses.append(total / count)
        auc = val_auc()
        metrics.write(epoch, "segments", losses[-1], auc, time.perf_counter() - start)
        log.info("segments epoch %d loss %.5f val_auc %.4f", epoch, losses[-1], auc)
        if val is not None and stopper.update(auc):
            log.info("early stop after epoch %d (best val_auc %.4f)", epoch, stopper.best)
            break
    if val is not None and epochs:
        stopper.restore()
    bip.store_representations(uni.cluster_means())
    return losses


def _mean_loss(batch_loss, n: int, batch_size: int) -> float:
    total = 0.0
    for rows in index_batches(n, batch_size):
        total += batch_loss(rows, None).item() * len(rows)
    return total / max(n, 1)


def train(config: Config, prepared: Prepared | None = None) -> tuple[USSR, MetricsWriter]:
    """Both phases end to end; writes the metrics CSV when ``metrics_path`` is set."""
    prepared = prepared or prepare(config)
    model = build_model(config, prepared)
    metrics = MetricsWriter(config.metrics_path or None)
    train_universal(model, prepared.train, prepared.val, metrics)
    train_segments(model, prepared.train, prepared.val, metrics)
    return model, metrics
