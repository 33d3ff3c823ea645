"""Adaptive capacity growth: new clusters from a buffer of poorly explained
data, new segments with every existing segment left bit-frozen."""

from __future__ import annotations

import datetime as _dt
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bipartite import BipartiteModel
from .diffcore import ops as T
from .diffcore.graph import grad
from .diffcore.optim import sgd_step
from .diffcore.tensor import Tensor
from .featurepipe import EncodedData, EncodedExample, batch_iter, index_batches
from .universal import UniversalModel, bernoulli_loglik

log = logging.getLogger(__name__)


class ExpansionError(RuntimeError):
    pass


class AuditLog:
    """Append-only plain-text record of expansion events."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None

    def record(self, operation: str, old: int, new: int, buffer_size: int) -> None:
        line = (f"{_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}\t{operation}"
                f"\told={old}\tnew={new}\tbuffer={buffer_size}")
        log.info("expansion event: %s", line)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(line + "\n")


@dataclass
class ExpansionBuffer:
    t_logit: float
    t_num: int
    examples: list[EncodedExample] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.examples)

    def data(self) -> EncodedData:
        if not self.examples:
            raise ExpansionError("expansion buffer is empty")
        return EncodedData.from_examples(self.examples)

    def clear(self) -> None:
        self.examples.clear()
        self.scores.clear()


def example_scores(model: UniversalModel, data: EncodedData) -> np.ndarray:
    """Per-example negated bound evaluated at the posterior means."""
    return model.elbo_terms(data, rng=None).data


def score_and_buffer(model: UniversalModel, buffer: ExpansionBuffer, data: EncodedData) -> np.ndarray:
    """Score each example and buffer those strictly above ``t_logit``; returns the mask."""
    scores = example_scores(model, data)
    mask = scores > buffer.t_logit
    for i in np.flatnonzero(mask):
        buffer.examples.append(data.example(int(i)))
        buffer.scores.append(float(scores[i]))
    return mask


def select_init_cluster(posteriors: np.ndarray) -> int:
    """0-based argmax of the summed gate posteriors; ties go to the smaller index."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.ndim != 2 or posteriors.shape[0] == 0:
        raise ExpansionError("cannot select an initial cluster from an empty buffer")
    # sorting per column makes the sum independent of buffer order
    return int(np.argmax(np.sort(posteriors, axis=0).sum(axis=0)))


def expand_cluster(model: UniversalModel, buffer: ExpansionBuffer, rng: np.random.Generator,
                   learning_rate: float, epochs: int = 50, batch_size: int = 256,
                   perturb_scale: float = 1e-3, clip: float | None = None,
                   audit: AuditLog | None = None) -> int:
    """Add cluster K+1 cloned from the best-matching head and fit it on the buffer.

    Only the new head, its prior and its gate column are updated.  Returns the
    new cluster count; the buffer is cleared.
    """
    if len(buffer) <= buffer.t_num:
        raise ExpansionError(f"buffer below t_num ({len(buffer)} <= {buffer.t_num})")
    data = buffer.data()
    source = select_init_cluster(model.gate_posterior(data))
    old_k = model.n_clusters
    new = model._add_cluster(rng)
    store = model.store
    for suffix in [n[len(f"head{source}."):] for n in store if n.startswith(f"head{source}.")]:
        src = store[f"head{source}.{suffix}"].data
        store[f"head{new}.{suffix}"].data = src + perturb_scale * rng.standard_normal(src.shape)
    for part in ("mu", "log_sigma"):
        src = store[f"prior{source}.{part}"].data
        store[f"prior{new}.{part}"].data = src + perturb_scale * rng.standard_normal(src.shape)
    store[f"gate.out{new}.w"].data = np.zeros_like(store[f"gate.out{new}.w"].data)
    store[f"gate.out{new}.b"].data = np.zeros_like(store[f"gate.out{new}.b"].data)

    trainable = model.cluster_param_names(new)
    params = {n: store[n] for n in trainable}
    for epoch in range(epochs):
        for batch in batch_iter(data, batch_size, shuffle_seed=int(rng.integers(2**31))):
            loss = model.expansion_loss(batch, new, rng)
            sgd_step(params, grad(loss, params), learning_rate, clip)
    log.info("cluster expansion: source head %d, K %d -> %d on %d buffered examples",
             source, old_k, model.n_clusters, len(buffer))
    if audit is not None:
        audit.record("expand_cluster", old_k, model.n_clusters, len(buffer))
    buffer.clear()
    return model.n_clusters


def expand_segment(universal: UniversalModel, bipartite: BipartiteModel, data: EncodedData,
                   rng: np.random.Generator, learning_rate: float, epochs: int = 10,
                   batch_size: int = 256, u: np.ndarray | None = None, segment_id: int | None = None,
                   clip: float | None = None, audit: AuditLog | None = None) -> int:
    """Register segment M, fit its decoder (and learnable features) on ``data``.

    Previously registered segments must already hold stored representations;
    their decoders, features and every shared or universal parameter stay
    untouched.  Returns the new segment count.
    """
    old_m = bipartite.n_segments
    if segment_id is not None and segment_id != old_m:
        if segment_id < old_m:
            raise ExpansionError(f"segment {segment_id} is already registered")
        raise ExpansionError(f"segment ids are dense; next id is {old_m}, got {segment_id}")
    unstored = [s.id for s in bipartite.segments if s.h_hat is None]
    if unstored:
        raise ExpansionError(f"segments {unstored} have no stored representation")
    if len(data) and (data.segment != old_m).any():
        raise ExpansionError(f"training data must carry segment id {old_m}")
    if u is None and bipartite.segments and not bipartite.segments[0].learnable_u:
        raise ExpansionError("segment features are required when segments use fixed features")

    desc = bipartite.add_segment(rng, u)
    if desc.learnable_u and old_m:
        # start from the centroid of the existing segment embeddings
        bipartite.store[desc.u_name].data = np.mean(
            [bipartite.store[s.u_name].data for s in bipartite.segments[:-1]], axis=0)

    z = universal.cluster_means()
    zbar = universal.universal_repr(data)
    trainable = bipartite.segment_param_names(desc.id)
    if not desc.learnable_u:
        trainable.remove(desc.u_name)
    params = {n: bipartite.store[n] for n in trainable}
    for epoch in range(epochs):
        for rows in index_batches(len(data), batch_size, shuffle_seed=int(rng.integers(2**31))):
            loss = _new_segment_loss(bipartite, desc.id, data[rows], zbar[rows], z)
            sgd_step(params, grad(loss, params), learning_rate, clip)
    h_hat, _ = bipartite.representations(Tensor(z), bipartite.u_matrix())
    desc.h_hat = h_hat.data[desc.id].copy()
    desc.frozen = True
    if audit is not None:
        audit.record("expand_segment", old_m, bipartite.n_segments, len(data))
    return bipartite.n_segments


def _new_segment_loss(bipartite: BipartiteModel, m: int, batch: EncodedData, zbar: np.ndarray,
                      z: np.ndarray) -> Tensor:
    h_hat, _ = bipartite.representations(Tensor(z), bipartite.u_matrix())
    logit = bipartite._decoder_logits(m, T.take(h_hat, np.array([m])), Tensor(zbar))
    return T.scale(T.sum(bernoulli_loglik(logit, batch.label)), -1.0 / len(batch), name="segment_loss")
