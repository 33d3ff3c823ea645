"""Field embeddings and an optional self-attention feature-interaction stack.

The attention stack is a compact interacting-layer encoder: each field is a
token, every layer runs multi-head scaled dot-product attention across fields
with a projected residual and a ReLU, and the final tokens are flattened in
field order.
"""

from __future__ import annotations

import numpy as np

from .diffcore import ops as T
from .diffcore.nn import ParamStore
from .diffcore.tensor import Tensor


class FieldEncoder:
    """Maps an encoded batch to the feature vector seen by the gate and the heads.

    ``kind="concat"`` concatenates sparse embeddings with the dense values;
    ``kind="attention"`` feeds per-field tokens through ``layers`` interacting
    layers.  ``raw()`` always returns the concatenated form so a gate can be
    wired to it independently of the encoder choice.
    """

    def __init__(self, store: ParamStore, field_sizes: list[int], n_dense: int, embed_dim: int,
                 rng: np.random.Generator, kind: str = "concat", heads: int = 2, layers: int = 1,
                 head_dim: int | None = None, prefix: str = "enc"):
        if kind not in ("concat", "attention"):
            raise ValueError(f"unknown encoder {kind!r}")
        self.store, self.prefix, self.kind = store, prefix, kind
        self.n_sparse, self.n_dense, self.embed_dim = len(field_sizes), n_dense, embed_dim
        self.heads, self.layers = heads, layers
        self.head_dim = head_dim or embed_dim
        for f, size in enumerate(field_sizes):
            store.add(f"{prefix}.emb{f}", rng.standard_normal((size, embed_dim)) * 0.1)
        if kind == "attention":
            store.add(f"{prefix}.dense_emb", rng.standard_normal((n_dense, embed_dim)) * 0.1)
            d_in = embed_dim
            for layer in range(layers):
                d_out = heads * self.head_dim
                for h in range(heads):
                    for part in ("q", "k", "v"):
                        store.add(f"{prefix}.l{layer}.h{h}.{part}",
                                  rng.standard_normal((d_in, self.head_dim)) / np.sqrt(d_in))
                store.add(f"{prefix}.l{layer}.res", rng.standard_normal((d_in, d_out)) / np.sqrt(d_in))
                d_in = d_out
            self._token_dim = d_in

    @property
    def raw_dim(self) -> int:
        return self.n_sparse * self.embed_dim + self.n_dense

    @property
    def out_dim(self) -> int:
        if self.kind == "concat":
            return self.raw_dim
        return (self.n_sparse + self.n_dense) * self._token_dim

    def _embeddings(self, sparse: np.ndarray) -> list[Tensor]:
        return [T.take(self.store[f"{self.prefix}.emb{f}"], sparse[:, f], name=f"{self.prefix}.emb{f}")
                for f in range(self.n_sparse)]

    def raw(self, dense: np.ndarray, sparse: np.ndarray) -> Tensor:
        parts = self._embeddings(sparse)
        if self.n_dense:
            parts.append(Tensor(dense, op="input", name="dense"))
        return T.concat(parts, axis=1, name=f"{self.prefix}.raw")

    def __call__(self, dense: np.ndarray, sparse: np.ndarray) -> Tensor:
        if self.kind == "concat":
            return self.raw(dense, sparse)
        b = dense.shape[0]
        tokens = [T.reshape(e, (b, 1, self.embed_dim)) for e in self._embeddings(sparse)]
        if self.n_dense:
            values = Tensor(dense.reshape(b, self.n_dense, 1), op="input", name="dense")
            tokens.append(T.mul(values, self.store[f"{self.prefix}.dense_emb"], name="dense_tokens"))
        x = T.concat(tokens, axis=1, name="tokens")
        for layer in range(self.layers):
            x = self._interact(x, layer)
        return T.reshape(x, (b, x.shape[1] * x.shape[2]), name=f"{self.prefix}.flat")

    def _interact(self, x: Tensor, layer: int) -> Tensor:
        p = f"{self.prefix}.l{layer}"
        outs = []
        for h in range(self.heads):
            q = T.matmul(x, self.store[f"{p}.h{h}.q"])
            k = T.matmul(x, self.store[f"{p}.h{h}.k"])
            v = T.matmul(x, self.store[f"{p}.h{h}.v"])
            scores = T.scale(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(self.head_dim))
            outs.append(T.matmul(T.softmax(scores, axis=-1, name=f"{p}.h{h}.attn"), v))
        mixed = T.concat(outs, axis=-1) if len(outs) > 1 else outs[0]
        return T.relu(T.add(mixed, T.matmul(x, self.store[f"{p}.res"])), name=f"{p}.out")
