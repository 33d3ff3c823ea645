import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_universal, random_batch, small_config, toy_stats
from ussr.expansion import (AuditLog, ExpansionBuffer, ExpansionError, example_scores, expand_cluster,
                            expand_segment, score_and_buffer, select_init_cluster)
from ussr.harness.synth import read_segment_features
from ussr.harness.train import load_dataset, prepare, train


@pytest.fixture(scope="module")
def trained(small_synth, tmp_path_factory):
    cfg = small_config(small_synth, tmp_path_factory.mktemp("exp"), epochs_universal=3, epochs_segments=3)
    model, _ = train(cfg, prepare(cfg))
    return model


def fresh(trained):
    return copy.deepcopy(trained)


# ---------------------------------------------------------------- buffering

def test_infinite_thresholds(rng):
    store, uni, _ = make_universal()
    data = random_batch(rng, 12, toy_stats())
    buf = ExpansionBuffer(np.inf, 5)
    assert not score_and_buffer(uni, buf, data).any() and len(buf) == 0
    buf = ExpansionBuffer(-np.inf, 5)
    assert score_and_buffer(uni, buf, data).all() and len(buf) == 12


def test_score_equal_to_threshold_not_buffered(rng):
    store, uni, _ = make_universal()
    data = random_batch(rng, 6, toy_stats())
    scores = example_scores(uni, data)
    buf = ExpansionBuffer(float(scores[2]), 1)
    mask = score_and_buffer(uni, buf, data)
    assert not mask[2]
    assert mask.tolist() == (scores > scores[2]).tolist()
    assert all(s > buf.t_logit for s in buf.scores)


def test_scores_are_the_per_example_bound(rng):
    store, uni, _ = make_universal(n_clusters=3)
    data = random_batch(rng, 7, toy_stats())
    np.testing.assert_array_equal(example_scores(uni, data), uni.elbo_terms(data).data)


# ---------------------------------------------------------------- initial cluster

def test_select_init_cluster_examples():
    assert select_init_cluster(np.array([[0.9, 0.1], [0.6, 0.4]])) == 0
    assert select_init_cluster(np.ones((3, 1))) == 0
    assert select_init_cluster(np.array([[0.5, 0.5], [0.5, 0.5]])) == 0
    assert select_init_cluster(np.array([[0.2, 0.3, 0.5], [0.1, 0.6, 0.3]])) == 1


def test_select_init_cluster_empty_fails():
    with pytest.raises(ExpansionError):
        select_init_cluster(np.zeros((0, 3)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_select_init_cluster_order_invariant(n, k, seed):
    rng = np.random.default_rng(seed)
    post = rng.dirichlet(np.ones(k), size=n)
    assert select_init_cluster(post) == select_init_cluster(post[rng.permutation(n)])


# ---------------------------------------------------------------- cluster expansion

def test_expand_requires_full_buffer(trained):
    model = fresh(trained)
    buf = ExpansionBuffer(-np.inf, 10)
    score_and_buffer(model.universal, buf, load_dataset(model.config.val_path, model.stats)[np.arange(10)])
    with pytest.raises(ExpansionError, match="buffer below t_num"):
        expand_cluster(model.universal, buf, model.rng, 0.01)


def test_expand_cluster_structure_and_freeze(trained, small_synth, tmp_path):
    model = fresh(trained)
    uni = model.universal
    phase2 = load_dataset(small_synth["phase2"], model.stats)
    old_k = uni.n_clusters
    frozen = list(model.store)
    before = model.store.fingerprint(frozen)
    buf = ExpansionBuffer(float(np.median(example_scores(uni, phase2))), 50)
    score_and_buffer(uni, buf, phase2)
    audit = AuditLog(tmp_path / "audit.log")
    new_k = expand_cluster(uni, buf, model.rng, 0.02, epochs=3, audit=audit)
    assert new_k == old_k + 1 == uni.n_clusters
    assert uni.gate_posterior(phase2[np.arange(4)]).shape == (4, new_k)
    assert model.store.fingerprint(frozen) == before
    assert set(model.store) - set(frozen) == set(uni.cluster_param_names(old_k))
    assert len(buf) == 0
    line = (tmp_path / "audit.log").read_text().strip().split("\t")
    assert line[1:4] == ["expand_cluster", f"old={old_k}", f"new={new_k}"]


def test_new_cluster_cloned_from_best_head(trained, small_synth):
    model = fresh(trained)
    uni = model.universal
    data = load_dataset(small_synth["phase2"], model.stats)
    buf = ExpansionBuffer(-np.inf, 10)
    score_and_buffer(uni, buf, data)
    src = select_init_cluster(uni.gate_posterior(buf.data()))
    k = expand_cluster(uni, buf, model.rng, 0.0, epochs=1, perturb_scale=1e-3) - 1
    for name in [n for n in model.store if n.startswith(f"head{k}.") or n.startswith(f"prior{k}.")]:
        source = name.replace(f"{k}.", f"{src}.", 1)
        diff = model.store[name].data - model.store[source].data
        assert 0 < np.abs(diff).max() < 1e-2
    assert not model.store[f"gate.out{k}.w"].data.any()


def test_predictions_stable_where_new_cluster_is_ignored(trained, small_synth):
    model = fresh(trained)
    uni = model.universal
    data = load_dataset(small_synth["test"], model.stats)
    before = uni.predict_universal(data)
    buf = ExpansionBuffer(-np.inf, 10)
    score_and_buffer(uni, buf, load_dataset(small_synth["phase2"], model.stats))
    k = expand_cluster(uni, buf, model.rng, 0.02, epochs=2) - 1
    # push the new column far down so the invariant has examples to check
    model.store[f"gate.out{k}.b"].data = model.store[f"gate.out{k}.b"].data - 40.0
    q_new = uni.gate_posterior(data)[:, k]
    after = uni.predict_universal(data)
    quiet = q_new < 1e-6
    assert quiet.sum() > 0
    assert np.abs(before[quiet] - after[quiet]).max() < 1e-4


# ---------------------------------------------------------------- segment expansion

def new_segment_data(model, small_synth, which="new_segment_train"):
    data = load_dataset(small_synth[which], model.stats)
    data.segment = np.full(len(data), model.n_segments)
    return data


def test_expand_segment_freezes_everything_old(trained, small_synth, tmp_path):
    model = fresh(trained)
    probe = load_dataset(small_synth["test"], model.stats)
    before_pred = model.predict(probe)
    before_univ = model.predict_universal(probe)
    old_names = list(model.store)
    before = model.store.fingerprint(old_names)
    old_hhat = [s.h_hat.tobytes() for s in model.bipartite.segments]
    u = read_segment_features(small_synth["segments"])[model.n_segments]
    m_old = model.n_segments
    m_new = expand_segment(model.universal, model.bipartite, new_segment_data(model, small_synth), model.rng,
                           0.05, epochs=3, u=u, audit=AuditLog(tmp_path / "a.log"))
    assert m_new == m_old + 1 == model.n_segments
    assert model.store.fingerprint(old_names) == before
    assert [s.h_hat.tobytes() for s in model.bipartite.segments[:-1]] == old_hhat
    assert model.predict(probe).tobytes() == before_pred.tobytes()
    assert model.predict_universal(probe).tobytes() == before_univ.tobytes()
    new = model.bipartite.segments[-1]
    assert new.frozen and new.h_hat is not None
    assert any(n.startswith(new.decoder + ".") for n in model.store)


def test_expand_segment_rejects_duplicate_and_gaps(trained, small_synth):
    model = fresh(trained)
    data = new_segment_data(model, small_synth)
    u = np.zeros(model.bipartite.segment_dim)
    with pytest.raises(ExpansionError, match="already registered"):
        expand_segment(model.universal, model.bipartite, data, model.rng, 0.05, u=u, segment_id=0)
    with pytest.raises(ExpansionError, match="dense"):
        expand_segment(model.universal, model.bipartite, data, model.rng, 0.05, u=u,
                       segment_id=model.n_segments + 3)
    data.segment[0] = 0
    with pytest.raises(ExpansionError, match="segment id"):
        expand_segment(model.universal, model.bipartite, data, model.rng, 0.05, u=u)
    with pytest.raises(ExpansionError, match="features are required"):
        expand_segment(model.universal, model.bipartite, new_segment_data(model, small_synth), model.rng, 0.05)


def test_expand_segment_needs_stored_representations(trained, small_synth):
    model = fresh(trained)
    model.bipartite.segments[0].h_hat = None
    with pytest.raises(ExpansionError, match="no stored representation"):
        expand_segment(model.universal, model.bipartite, new_segment_data(model, small_synth), model.rng, 0.05,
                       u=np.zeros(model.bipartite.segment_dim))
