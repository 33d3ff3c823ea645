"""Segment-specific representations from a cluster/segment bipartite round.

Edges h1[k, m] = f_e(z_k || u_m) are summed per cluster and per segment and
passed through a shared vertex encoder f_v; a second edge net scores each
(cluster, segment) pair from those summaries, the scores are normalised over
clusters, and each segment's representation is the weighted sum of the
edge-decoder outputs f_e_hat(z_k || u_m).  Every segment owns a decoder that
reads its representation next to the user's universal representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ops as T
from .diffcore.nn import ParamStore, add_mlp, mlp
from .diffcore.tensor import Tensor
from .featurepipe import EncodedData
from .universal import bernoulli_loglik, check_labels


class UnknownSegmentError(KeyError):
    pass


@dataclass
class SegmentDescriptor:
    id: int
    learnable_u: bool
    frozen: bool = False
    h_hat: np.ndarray | None = None

    @property
    def u_name(self) -> str:
        return f"seg{self.id}.u"

    @property
    def decoder(self) -> str:
        return f"dec_seg{self.id}"


class BipartiteModel:
    def __init__(self, store: ParamStore, latent_dim: int, segment_dim: int, repr_dim: int,
                 hidden: int, rng: np.random.Generator, tau: float = 1.0, gumbel: bool = False):
        if tau <= 0:
            raise ValueError("temperature must be positive")
        self.store = store
        self.latent_dim, self.segment_dim, self.repr_dim, self.hidden = latent_dim, segment_dim, repr_dim, hidden
        self.tau, self.gumbel = tau, gumbel
        self.segments: list[SegmentDescriptor] = []
        pair = latent_dim + segment_dim
        add_mlp(store, "bip.fe", [pair, hidden, repr_dim], rng)
        add_mlp(store, "bip.fv", [repr_dim, repr_dim], rng)
        add_mlp(store, "bip.fe2", [2 * repr_dim, hidden, 1], rng, last_gain=0.5)
        add_mlp(store, "bip.fe_hat", [pair, hidden, repr_dim], rng)

    # -- registry -------------------------------------------------------------

    def add_segment(self, rng: np.random.Generator, u: np.ndarray | None = None) -> SegmentDescriptor:
        """Register segment ``M``; ``u=None`` makes its feature vector a learnable embedding."""
        m = len(self.segments)
        desc = SegmentDescriptor(m, learnable_u=u is None)
        if u is None:
            u = rng.standard_normal(self.segment_dim) * 0.1
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.segment_dim,):
            raise ValueError(f"segment features must have dimension {self.segment_dim}, got {u.shape}")
        self.store.add(desc.u_name, u)
        add_mlp(self.store, desc.decoder, [self.repr_dim + self.latent_dim, self.hidden, 1], rng)
        self.segments.append(desc)
        return desc

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    def segment(self, m: int) -> SegmentDescriptor:
        if not 0 <= m < len(self.segments):
            raise UnknownSegmentError(f"unknown segment {m}")
        return self.segments[m]

    def segment_param_names(self, m: int) -> list[str]:
        desc = self.segment(m)
        return [n for n in self.store if n == desc.u_name or n.startswith(desc.decoder + ".")]

    def shared_param_names(self) -> list[str]:
        return [n for n in self.store if n.startswith("bip.")]

    def trainable_names(self) -> list[str]:
        names = self.shared_param_names()
        for s in self.segments:
            if not s.frozen:
                names += [n for n in self.segment_param_names(s.id) if s.learnable_u or n != s.u_name]
        return names

    def u_matrix(self, ids: list[int] | None = None) -> Tensor:
        ids = range(len(self.segments)) if ids is None else ids
        rows = [T.reshape(self.store[self.segment(m).u_name], (1, self.segment_dim)) for m in ids]
        return T.concat(rows, axis=0) if len(rows) > 1 else rows[0]

    # -- interaction round ------------------------------------------------------

    def _pairs(self, z: Tensor, u: Tensor) -> Tensor:
        k, m = z.shape[0], u.shape[0]
        kk, mm = np.repeat(np.arange(k), m), np.tile(np.arange(m), k)
        return T.concat([T.take(z, kk), T.take(u, mm)], axis=1, name="pairs")

    def edge_embed(self, z: Tensor, u: Tensor) -> Tensor:
        """h1 for every (k, m): shape (K, M, d_h)."""
        if z.shape[1] != self.latent_dim or u.shape[1] != self.segment_dim:
            raise ValueError(f"edge_embed expects z (*, {self.latent_dim}) and u (*, {self.segment_dim}), "
                             f"got {z.shape} and {u.shape}")
        h1 = mlp(self.store, "bip.fe", self._pairs(z, u))
        return T.reshape(h1, (z.shape[0], u.shape[0], self.repr_dim), name="h1")

    def aggregate(self, h1: Tensor) -> tuple[Tensor, Tensor]:
        """(h2 per cluster (K, d_h), h2 per segment (M, d_h)) through the shared f_v."""
        h2k = mlp(self.store, "bip.fv", T.sum(h1, axis=1), final_relu=True)
        h2m = mlp(self.store, "bip.fv", T.sum(h1, axis=0), final_relu=True)
        return h2k, h2m

    def edge_weights(self, h2k: Tensor, h2m: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        """(K, M) weights; each column is a softmax over clusters."""
        k, m = h2k.shape[0], h2m.shape[0]
        logits = T.reshape(mlp(self.store, "bip.fe2", self._pairs(h2k, h2m)), (k, m))
        if self.gumbel and rng is not None:
            u = rng.uniform(np.finfo(float).tiny, 1.0, size=(k, m))
            logits = T.add(logits, -np.log(-np.log(u)))
        return T.softmax(T.scale(logits, 1.0 / self.tau), axis=0, name="edge_weights")

    def representations(self, z: Tensor, u: Tensor, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """(h_hat (M, d_h), e (K, M)) for the given cluster and segment banks."""
        h2k, h2m = self.aggregate(self.edge_embed(z, u))
        e = self.edge_weights(h2k, h2m, rng)
        k, m = z.shape[0], u.shape[0]
        decoded = T.reshape(mlp(self.store, "bip.fe_hat", self._pairs(z, u)), (k, m, self.repr_dim))
        h_hat = T.sum(T.mul(decoded, T.reshape(e, (k, m, 1))), axis=0, name="h_hat")
        return h_hat, e

    def segment_repr(self, m: int, z: np.ndarray) -> np.ndarray:
        """Stored h_hat for frozen segments, otherwise a fresh interaction round."""
        desc = self.segment(m)
        if desc.h_hat is not None:
            return desc.h_hat
        h_hat, _ = self.representations(Tensor(z), self.u_matrix())
        return h_hat.data[m]

    def store_representations(self, z: np.ndarray, ids: list[int] | None = None) -> None:
        """Compute h_hat over all registered segments and freeze ``ids`` (default: all)."""
        h_hat, _ = self.representations(Tensor(z), self.u_matrix())
        for m in (range(self.n_segments) if ids is None else ids):
            desc = self.segment(m)
            desc.h_hat = h_hat.data[m].copy()
            desc.frozen = True

    # -- prediction ---------------------------------------------------------------

    def _decoder_logits(self, m: int, h: Tensor, zbar: Tensor) -> Tensor:
        n = zbar.shape[0]
        rows = T.take(T.reshape(h, (1, self.repr_dim)), np.zeros(n, dtype=np.int64))
        return mlp(self.store, self.segment(m).decoder, T.concat([rows, zbar], axis=1))

    def _groups(self, segments: np.ndarray) -> list[tuple[int, np.ndarray]]:
        ids = np.unique(segments)
        for m in ids:
            self.segment(int(m))
        return [(int(m), np.flatnonzero(segments == m)) for m in ids]

    def segment_loss(self, batch: EncodedData, zbar: Tensor | np.ndarray, z: Tensor | np.ndarray,
                     rng: np.random.Generator | None = None) -> Tensor:
        """Mean Bernoulli cross-entropy of the segment path over the batch."""
        check_labels(batch.label)
        zbar = zbar if isinstance(zbar, Tensor) else Tensor(zbar, op="input", name="zbar")
        z = z if isinstance(z, Tensor) else Tensor(z, op="input", name="z_bank")
        need_round = any(self.segment(m).h_hat is None for m, _ in self._groups(batch.segment))
        h_hat = self.representations(z, self.u_matrix(), rng)[0] if need_round else None
        total = None
        for m, rows in self._groups(batch.segment):
            desc = self.segments[m]
            h = Tensor(desc.h_hat) if desc.h_hat is not None else T.take(h_hat, np.array([m]))
            logit = self._decoder_logits(m, h, T.take(zbar, rows))
            part = T.sum(bernoulli_loglik(logit, batch.label[rows]))
            total = part if total is None else T.add(total, part)
        return T.scale(total, -1.0 / len(batch), name="segment_loss")

    def predict_segment(self, batch: EncodedData, zbar: np.ndarray, z: np.ndarray) -> np.ndarray:
        out = np.empty(len(batch))
        groups = self._groups(batch.segment)
        h_all = None
        if any(self.segments[m].h_hat is None for m, _ in groups):
            h_all = self.representations(Tensor(z), self.u_matrix())[0].data
        for m, rows in groups:
            desc = self.segments[m]
            h = desc.h_hat if desc.h_hat is not None else h_all[m]
            logit = self._decoder_logits(m, Tensor(h), Tensor(zbar[rows]))
            out[rows] = T.sigmoid(logit).data[:, 0]
        return out
