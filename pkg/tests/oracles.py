"""Independent reference computations used by the unit and acceptance tests."""

import math

import numpy as np

from conftest import make_universal, toy_stats
from ussr.featurepipe import EncodedData


def monte_carlo_kl(post, prior, n, rng):
    """Mean and standard error of log q(x) - log p(x) for x ~ q."""
    x = post.mean + post.std * rng.standard_normal((n, len(post.mean)))

    def logpdf(x, g):
        return np.sum(-0.5 * ((x - g.mean) / g.std) ** 2 - np.log(g.std) - 0.5 * math.log(2 * math.pi), axis=1)

    d = logpdf(x, post) - logpdf(x, prior)
    return d.mean(), d.std(ddof=1) / math.sqrt(n)


def scalar_model():
    """K=2, one dense feature, every width 1 so each parameter is a hand-set scalar."""
    stats = toy_stats(n_dense=1, field_sizes=())
    store, uni, _ = make_universal(n_clusters=2, latent_dim=1, hidden=1, stats=stats, beta=0.7, beta_c=0.3)
    values = {
        "gate.w0": 0.8, "gate.b0": 0.1,
        "gate.out0.w": 1.5, "gate.out0.b": -0.2, "gate.out1.w": -0.5, "gate.out1.b": 0.4,
        "head0.w0": 1.2, "head0.b0": 0.3, "head0.w1": [0.7, -0.4], "head0.b1": [0.1, -0.2],
        "head1.w0": -0.6, "head1.b0": 1.1, "head1.w1": [-0.9, 0.3], "head1.b1": [0.5, -0.6],
        "prior0.mu": 0.2, "prior0.log_sigma": -0.1, "prior1.mu": -0.4, "prior1.log_sigma": 0.25,
        "dec.w0": 0.9, "dec.b0": 0.6, "dec.w1": 1.3, "dec.b1": -0.7,
    }
    for name, v in values.items():
        store[name].data = np.array(v, dtype=float).reshape(store[name].shape)
    return store, uni, values


def scalar_oracle(values, xs, ys, eps, beta, beta_c):
    """Hand-written scalar recomputation of the mixture bound."""
    v = values
    relu = lambda t: t if t > 0 else 0.0
    log_sig = lambda t: -math.log1p(math.exp(-t)) if t >= 0 else t - math.log1p(math.exp(t))
    total = 0.0
    for i, (x, y) in enumerate(zip(xs, ys)):
        h = relu(v["gate.w0"] * x + v["gate.b0"])
        l0 = h * v["gate.out0.w"] + v["gate.out0.b"]
        l1 = h * v["gate.out1.w"] + v["gate.out1.b"]
        m = max(l0, l1)
        q = [math.exp(l0 - m) / (math.exp(l0 - m) + math.exp(l1 - m)),
             math.exp(l1 - m) / (math.exp(l0 - m) + math.exp(l1 - m))]
        bound = 0.0
        cat = 0.0
        for k in (0, 1):
            hh = relu(v[f"head{k}.w0"] * x + v[f"head{k}.b0"])
            mu = hh * v[f"head{k}.w1"][0] + v[f"head{k}.b1"][0]
            ls = hh * v[f"head{k}.w1"][1] + v[f"head{k}.b1"][1]
            sd = math.exp(ls)
            z = mu + sd * eps[k][i]
            d = relu(v["dec.w0"] * z + v["dec.b0"])
            logit = d * v["dec.w1"] + v["dec.b1"]
            ll = y * log_sig(logit) + (1 - y) * log_sig(-logit)
            pm, psd = v[f"prior{k}.mu"], math.exp(v[f"prior{k}.log_sigma"])
            kl = math.log(psd / sd) + (sd ** 2 + (mu - pm) ** 2) / (2 * psd ** 2) - 0.5
            bound += q[k] * (ll - beta * kl)
            cat += q[k] * math.log(q[k] / 0.5)
        total += -bound + beta_c * cat
    return total / len(xs)


def scalar_batch():
    xs = [0.5, -1.2, 2.0, 0.05]
    ys = [1, 0, 1, 0]
    return xs, ys, EncodedData(np.array(xs).reshape(-1, 1), np.zeros((4, 0)), ys)


def pairwise_auc(scores, labels):
    """O(n^2) count: wins plus half the ties over all positive/negative pairs."""
    scores, labels = np.asarray(scores), np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = ties = 0
    for start in range(0, len(pos), 256):
        p = pos[start:start + 256, None]
        wins += int((p > neg[None, :]).sum())
        ties += int((p == neg[None, :]).sum())
    return (wins + 0.5 * ties) / (len(pos) * len(neg))
