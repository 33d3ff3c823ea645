import numpy as np
import pytest

from ussr.bipartite import BipartiteModel
from ussr.diffcore.nn import ParamStore
from ussr.encoder import FieldEncoder
from ussr.featurepipe import EncodedData, FeatureStats, Schema
from ussr.harness.config import Config
from ussr.harness.synth import SyntheticSpec, generate_synthetic, write_dataset
from ussr.universal import UniversalModel


def toy_stats(n_dense=2, field_sizes=(4, 3), embed_dim=3) -> FeatureStats:
    dense = tuple(f"I{i + 1}" for i in range(n_dense))
    sparse = tuple(f"C{i + 1}" for i in range(len(field_sizes)))
    vocab = {f: {f"v{j}": j for j in range(1, n)} for f, n in zip(sparse, field_sizes)}
    return FeatureStats(Schema(dense, sparse, True), vocab, cap=max(field_sizes, default=1), embed_dim=embed_dim)


def random_batch(rng, n, stats: FeatureStats, n_segments=1) -> EncodedData:
    sizes = stats.field_sizes()
    sparse = np.stack([rng.integers(0, s, size=n) for s in sizes], axis=1)
    return EncodedData(rng.normal(size=(n, len(stats.schema.dense))), sparse,
                       rng.integers(0, 2, size=n), rng.integers(0, n_segments, size=n))


def make_universal(n_clusters=2, latent_dim=3, hidden=5, seed=0, beta=1.0, beta_c=1.0,
                   encoder="concat", stats=None, **kw):
    stats = stats or toy_stats()
    rng = np.random.default_rng(seed)
    store = ParamStore()
    enc = FieldEncoder(store, stats.field_sizes(), len(stats.schema.dense), stats.embed_dim, rng, kind=encoder)
    uni = UniversalModel(store, enc, n_clusters, latent_dim, hidden, rng, beta=beta, beta_c=beta_c, **kw)
    return store, uni, rng


def make_bipartite(store=None, latent_dim=3, segment_dim=2, repr_dim=4, hidden=5, n_segments=2, seed=0,
                   fixed_u=True, **kw):
    rng = np.random.default_rng(seed)
    store = ParamStore() if store is None else store
    bip = BipartiteModel(store, latent_dim, segment_dim, repr_dim, hidden, rng, **kw)
    for _ in range(n_segments):
        bip.add_segment(rng, rng.normal(size=segment_dim) if fixed_u else None)
    return store, bip, rng


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """A few thousand synthetic rows written to disk, shared by harness tests."""
    out = tmp_path_factory.mktemp("synth")
    spec = SyntheticSpec(train_rows=1500, val_rows=400, test_rows=400, phase2_rows=600,
                         new_segment_rows=400, holdout_mode=3)
    paths = write_dataset(generate_synthetic(spec, 7), out)
    return paths


def small_config(paths, tmp_path, **kw) -> Config:
    base = dict(seed=3, beta=0.01, n_clusters=2, latent_dim=4, hidden=16, repr_dim=4,
                epochs_universal=2, epochs_segments=2, batch_size=128,
                train_path=str(paths["train"]), val_path=str(paths["val"]), test_path=str(paths["test"]),
                segments_path=str(paths["segments"]), metrics_path=str(tmp_path / "metrics.csv"))
    base.update(kw)
    return Config(**base)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"ACCEPTANCE {number} {title}: {'PASS' if passed else 'FAIL'}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
