"""Universal representation: a softmax cluster gate, one diagonal-Gaussian
posterior head and learnable prior per cluster, and a shared decoder, trained
by the mixture information-bottleneck bound."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffcore import ops as T
from .diffcore.nn import ParamStore, add_mlp, init_linear, mlp
from .diffcore.tensor import Tensor
from .encoder import FieldEncoder
from .featurepipe import EncodedData


class ModelError(ValueError):
    pass


@dataclass
class GaussianParams:
    mean: np.ndarray
    std: np.ndarray


def kl_diag_gaussian(post: GaussianParams, prior: GaussianParams) -> float:
    """KL(post || prior) for diagonal Gaussians, summed over dimensions."""
    m1, s1 = np.asarray(post.mean, float), np.asarray(post.std, float)
    m2, s2 = np.asarray(prior.mean, float), np.asarray(prior.std, float)
    if m1.shape != m2.shape or s1.shape != m1.shape or s2.shape != m2.shape:
        raise ModelError(f"dimension mismatch: {m1.shape}/{s1.shape} vs {m2.shape}/{s2.shape}")
    if (s1 <= 0).any() or (s2 <= 0).any():
        raise ModelError("standard deviations must be strictly positive")
    return float(np.sum(np.log(s2 / s1) + (s1 ** 2 + (m1 - m2) ** 2) / (2.0 * s2 ** 2) - 0.5))


def kl_diag_gaussian_t(mu: Tensor, log_sigma: Tensor, prior_mu: Tensor, prior_log_sigma: Tensor) -> Tensor:
    """Row-wise graph version of ``kl_diag_gaussian`` with log-std inputs; returns (B, 1)."""
    var_ratio = T.mul(T.exp(T.scale(log_sigma, 2.0)), T.exp(T.scale(prior_log_sigma, -2.0)))
    diff = T.add(mu, T.neg(prior_mu))
    mahal = T.mul(T.mul(diff, diff), T.exp(T.scale(prior_log_sigma, -2.0)))
    per_dim = T.add(T.add(prior_log_sigma, T.neg(log_sigma)),
                    T.add(T.scale(T.add(var_ratio, mahal), 0.5), -0.5))
    return T.sum(per_dim, axis=1, keepdims=True, name="kl_gauss")


def bernoulli_loglik(logit: Tensor, y: np.ndarray) -> Tensor:
    """log p(y | logit) per row, shape (B, 1)."""
    y = y.reshape(-1, 1)
    return T.add(T.mul(T.log_sigmoid(logit), y), T.mul(T.log_sigmoid(T.neg(logit)), 1.0 - y),
                 name="loglik")


def check_labels(y: np.ndarray) -> None:
    if not np.isin(y, (0.0, 1.0)).all():
        raise ModelError("labels must be 0 or 1")


class UniversalModel:
    """Gate q(c|x), heads q(z|x,c=k), priors p(z|c=k) and decoder p(y|z).

    Parameters live in the shared ``store``: ``gate.*`` (hidden layer plus one
    output column ``gate.out{k}`` per cluster), ``head{k}.*``, ``prior{k}.mu``,
    ``prior{k}.log_sigma`` and ``dec.*``.  Per-cluster parameters are kept in
    separate tensors so a new cluster never touches existing ones.
    """

    def __init__(self, store: ParamStore, encoder: FieldEncoder, n_clusters: int, latent_dim: int,
                 hidden: int, rng: np.random.Generator, beta: float = 1.0, beta_c: float = 1.0,
                 gate_input: str = "encoded", n_samples: int = 1):
        if n_clusters < 1:
            raise ModelError("need at least one cluster")
        if gate_input not in ("encoded", "raw"):
            raise ModelError(f"unknown gate_input {gate_input!r}")
        self.store, self.encoder = store, encoder
        self.latent_dim, self.hidden = latent_dim, hidden
        self.beta, self.beta_c, self.gate_input = beta, beta_c, gate_input
        self.n_samples = n_samples
        self.n_clusters = 0
        gate_dim = encoder.raw_dim if gate_input == "raw" else encoder.out_dim
        add_mlp(store, "gate", [gate_dim, hidden], rng)
        add_mlp(store, "dec", [latent_dim, hidden, 1], rng)
        for _ in range(n_clusters):
            self._add_cluster(rng)

    # -- structure ------------------------------------------------------------

    def _add_cluster(self, rng: np.random.Generator) -> int:
        k = self.n_clusters
        w, b = init_linear(rng, self.hidden, 1, gain=1.0)
        self.store.add(f"gate.out{k}.w", w)
        self.store.add(f"gate.out{k}.b", b)
        add_mlp(self.store, f"head{k}", [self.encoder.out_dim, self.hidden, 2 * self.latent_dim], rng,
                last_gain=0.1)
        self.store.add(f"prior{k}.mu", np.zeros(self.latent_dim))
        self.store.add(f"prior{k}.log_sigma", np.zeros(self.latent_dim))
        self.n_clusters += 1
        return k

    def cluster_param_names(self, k: int) -> list[str]:
        return [n for n in self.store
                if n.startswith((f"head{k}.", f"prior{k}.", f"gate.out{k}."))]

    def param_names(self) -> list[str]:
        return [n for n in self.store
                if n.startswith(("gate.", "head", "prior", "dec.", self.encoder.prefix + "."))]

    def cluster_means(self) -> np.ndarray:
        """Prior means stacked to (K, d_z)."""
        return np.stack([self.store[f"prior{k}.mu"].data for k in range(self.n_clusters)])

    # -- forward pieces ---------------------------------------------------------

    def features(self, batch: EncodedData) -> tuple[Tensor, Tensor]:
        feat = self.encoder(batch.dense, batch.sparse)
        gate_feat = self.encoder.raw(batch.dense, batch.sparse) if (
            self.gate_input == "raw" and self.encoder.kind != "concat") else feat
        return gate_feat, feat

    def gate_logits(self, gate_feat: Tensor) -> Tensor:
        h = mlp(self.store, "gate", gate_feat, final_relu=True)
        cols = [T.add(T.matmul(h, self.store[f"gate.out{k}.w"]), self.store[f"gate.out{k}.b"])
                for k in range(self.n_clusters)]
        return T.concat(cols, axis=1, name="gate.logits") if len(cols) > 1 else cols[0]

    def head(self, feat: Tensor, k: int) -> tuple[Tensor, Tensor]:
        """Posterior mean and log-std (half log-variance) of cluster ``k``."""
        out = mlp(self.store, f"head{k}", feat)
        d = self.latent_dim
        return T.columns(out, 0, d, name=f"head{k}.mu"), T.columns(out, d, 2 * d, name=f"head{k}.log_sigma")

    def decode(self, z: Tensor) -> Tensor:
        return mlp(self.store, "dec", z)

    def prior(self, k: int) -> tuple[Tensor, Tensor]:
        return self.store[f"prior{k}.mu"], self.store[f"prior{k}.log_sigma"]

    def cluster_terms(self, feat: Tensor, y: np.ndarray, k: int, noise) -> tuple[Tensor, Tensor]:
        """(log p(y|z~_k), KL(q(z|x,c=k) || p(z|c=k))), each (B, 1)."""
        mu, log_sigma = self.head(feat, k)
        sigma = T.exp(log_sigma)
        if noise is None:
            loglik = bernoulli_loglik(self.decode(T.gaussian_sample(mu, sigma, np.zeros(mu.shape))), y)
        else:
            draws = [bernoulli_loglik(self.decode(T.gaussian_sample(mu, sigma, noise, name=f"z{k}")), y)
                     for _ in range(self.n_samples)]
            loglik = draws[0]
            for d in draws[1:]:
                loglik = T.add(loglik, d)
            if self.n_samples > 1:
                loglik = T.scale(loglik, 1.0 / self.n_samples)
        kl = kl_diag_gaussian_t(mu, log_sigma, *self.prior(k))
        return loglik, kl

    # -- objectives -------------------------------------------------------------

    def elbo_terms(self, batch: EncodedData, rng: np.random.Generator | None = None) -> Tensor:
        """Per-example negated bound, shape (B,).

        ``rng=None`` evaluates at the posterior means (eps = 0), which makes the
        score deterministic; training passes a generator and draws one sample
        per cluster per example.
        """
        check_labels(batch.label)
        gate_feat, feat = self.features(batch)
        logits = self.gate_logits(gate_feat)
        q = T.softmax(logits, axis=1, name="q_c")
        log_q = T.log_softmax(logits, axis=1)
        cols = []
        for k in range(self.n_clusters):
            loglik, kl = self.cluster_terms(feat, batch.label, k, rng)
            cols.append(T.add(loglik, T.scale(kl, -self.beta)))
        terms = T.concat(cols, axis=1) if len(cols) > 1 else cols[0]
        mixture = T.sum(T.mul(q, terms), axis=1)
        cat_kl = T.sum(T.mul(q, T.add(log_q, math.log(self.n_clusters))), axis=1, name="kl_cat")
        return T.add(T.neg(mixture), T.scale(cat_kl, self.beta_c), name="elbo_terms")

    def elbo_loss(self, batch: EncodedData, rng: np.random.Generator | None = None) -> Tensor:
        return T.mean(self.elbo_terms(batch, rng), name="elbo_loss")

    def expansion_loss(self, batch: EncodedData, k: int, rng: np.random.Generator | None = None) -> Tensor:
        """Mean of -[log q(c=k|x) + log p(y|z~_k) - beta KL_k] over the batch."""
        check_labels(batch.label)
        gate_feat, feat = self.features(batch)
        log_q = T.log_softmax(self.gate_logits(gate_feat), axis=1)
        log_qk = T.columns(log_q, k, k + 1)
        loglik, kl = self.cluster_terms(feat, batch.label, k, rng)
        per_example = T.add(T.add(log_qk, loglik), T.scale(kl, -self.beta))
        return T.neg(T.mean(per_example), name="expansion_loss")

    def kl_summary(self, batch: EncodedData) -> float:
        """Average gate-weighted Gaussian KL over the batch."""
        gate_feat, feat = self.features(batch)
        q = T.softmax(self.gate_logits(gate_feat), axis=1).data
        total = np.zeros(len(batch))
        for k in range(self.n_clusters):
            mu, log_sigma = self.head(feat, k)
            total += q[:, k] * kl_diag_gaussian_t(mu, log_sigma, *self.prior(k)).data[:, 0]
        return float(total.mean())

    # -- inference --------------------------------------------------------------

    def gate_posterior(self, batch: EncodedData) -> np.ndarray:
        gate_feat, _ = self.features(batch)
        return T.softmax(self.gate_logits(gate_feat), axis=1).data

    def repr_tensor(self, batch: EncodedData) -> Tensor:
        gate_feat, feat = self.features(batch)
        q = T.softmax(self.gate_logits(gate_feat), axis=1)
        zbar = None
        for k in range(self.n_clusters):
            mu, _ = self.head(feat, k)
            part = T.mul(T.columns(q, k, k + 1), mu)
            zbar = part if zbar is None else T.add(zbar, part)
        return zbar

    def universal_repr(self, batch: EncodedData) -> np.ndarray:
        """Gate-weighted posterior mean, (B, d_z); no sampling."""
        return self.repr_tensor(batch).data

    def predict_universal(self, batch: EncodedData) -> np.ndarray:
        return T.sigmoid(self.decode(self.repr_tensor(batch))).data[:, 0]

