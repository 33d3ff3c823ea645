"""The assembled model: feature statistics, universal and bipartite parts,
one parameter store and one random generator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..bipartite import BipartiteModel
from ..diffcore.nn import ParamStore
from ..encoder import FieldEncoder
from ..featurepipe import EncodedData, FeatureStats
from ..universal import UniversalModel
from .config import Config


@dataclass
class USSR:
    config: Config
    stats: FeatureStats
    store: ParamStore
    encoder: FieldEncoder
    universal: UniversalModel
    bipartite: BipartiteModel
    rng: np.random.Generator

    @classmethod
    def build(cls, config: Config, stats: FeatureStats, n_segments: int = 0,
              segment_features: dict[int, np.ndarray] | None = None,
              n_clusters: int | None = None) -> "USSR":
        rng = np.random.default_rng(config.seed)
        store = ParamStore()
        encoder = FieldEncoder(store, stats.field_sizes(), len(stats.schema.dense), stats.embed_dim, rng,
                               kind=config.encoder, heads=config.attn_heads, layers=config.attn_layers)
        universal = UniversalModel(store, encoder, n_clusters or config.n_clusters, config.latent_dim,
                                   config.hidden, rng, beta=config.beta, beta_c=config.beta_c,
                                   gate_input=config.gate_input, n_samples=config.n_samples)
        seg_dim = config.segment_dim
        if segment_features:
            seg_dim = len(next(iter(segment_features.values())))
        bipartite = BipartiteModel(store, config.latent_dim, seg_dim, config.repr_dim, config.hidden, rng,
                                   tau=config.tau, gumbel=config.gumbel)
        for m in range(n_segments):
            u = None
            if segment_features:
                if m not in segment_features:
                    raise ValueError(f"segment features file has no row for segment {m}")
                u = segment_features[m]
            bipartite.add_segment(rng, u)
        return cls(config, stats, store, encoder, universal, bipartite, rng)

    @property
    def n_clusters(self) -> int:
        return self.universal.n_clusters

    @property
    def n_segments(self) -> int:
        return self.bipartite.n_segments

    def predict_universal(self, data: EncodedData, batch_size: int = 4096) -> np.ndarray:
        return _batched(lambda b: self.universal.predict_universal(b), data, batch_size)

    def universal_repr(self, data: EncodedData, batch_size: int = 4096) -> np.ndarray:
        if len(data) == 0:
            return np.zeros((0, self.universal.latent_dim))
        return np.concatenate([self.universal.universal_repr(data[i:i + batch_size])
                               for i in range(0, len(data), batch_size)])

    def predict(self, data: EncodedData, batch_size: int = 4096) -> np.ndarray:
        """Segment-path probabilities."""
        z = self.universal.cluster_means()
        return _batched(lambda b: self.bipartite.predict_segment(b, self.universal.universal_repr(b), z),
                        data, batch_size)


def _batched(fn, data: EncodedData, batch_size: int) -> np.ndarray:
    if len(data) == 0:
        return np.zeros(0)
    return np.concatenate([fn(data[np.arange(i, min(i + batch_size, len(data)))])
                           for i in range(0, len(data), batch_size)])
