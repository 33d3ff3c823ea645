"""Multi-modal, long-tailed synthetic CTR data with per-segment label functions.

Each row belongs to a latent mode (its dense features and category
preferences) and to a segment (its label function).  The label logit is

    sign * (a_m * s1(x) + c_m * s2(x) + mode_direction . g) + b_m + mode_offset

where s1 mixes dense features and category effects, s2 is a second dense
direction, (a_m, c_m, b_m) are the segment's coefficients and sign is -1
only for a mode withheld to exercise cluster expansion.  The segment
features file publishes a noisy copy of those coefficients, which is the
operator knowledge the segment path can exploit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class SynthError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    n_modes: int = 3
    n_segments: int = 6
    tail_exponent: float = 1.5
    holdout_mode: int = 0          # 1-based mode withheld from phase-1 files; 0 = none
    n_dense: int = 4
    n_sparse: int = 4
    vocab_size: int = 30
    segment_dim: int = 4
    train_rows: int = 50000
    val_rows: int = 10000
    test_rows: int = 10000
    phase2_rows: int = 4000
    new_segment_rows: int = 2000

    def validate(self) -> None:
        if self.n_modes < 1 or self.n_segments < 1:
            raise SynthError("need at least one mode and one segment")
        if not 0 <= self.holdout_mode <= self.n_modes:
            raise SynthError(f"holdout_mode must be in 0..{self.n_modes}")
        if self.holdout_mode and self.n_modes < 2:
            raise SynthError("holding out a mode needs at least two modes")
        if self.segment_dim < 3:
            raise SynthError("segment_dim must be >= 3 to carry the segment coefficients")
        if min(self.train_rows, self.val_rows, self.test_rows) < 1:
            raise SynthError("row counts must be positive")
        if self.tail_exponent < 0:
            raise SynthError("tail exponent must be nonnegative")


@dataclass
class Table:
    dense: np.ndarray
    sparse: np.ndarray
    label: np.ndarray
    segment: np.ndarray
    mode: np.ndarray

    def __len__(self) -> int:
        return len(self.label)


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    tables: dict[str, Table] = field(default_factory=dict)
    segment_features: np.ndarray | None = None


class _World:
    """All random structure shared by every table of one generated dataset."""

    def __init__(self, spec: SyntheticSpec, rng: np.random.Generator):
        s = spec
        self.spec = s
        self.mode_mean = rng.normal(0.0, 1.2, size=(s.n_modes, s.n_dense))
        self.mode_offset = rng.normal(0.0, 0.5, size=s.n_modes)
        self.mode_dir = rng.normal(0.0, 0.6, size=(s.n_modes, s.n_dense))
        # the withheld mode sits apart and inverts the segment signal, a label
        # rule the phase-1 modes never show
        self.mode_sign = np.ones(s.n_modes)
        if s.holdout_mode:
            h = s.holdout_mode - 1
            self.mode_mean[h] += 2.0
            self.mode_sign[h] = -1.0
        ranks = np.arange(1, s.vocab_size + 1)
        base = ranks ** -1.1
        self.cat_probs = np.empty((s.n_modes, s.n_sparse, s.vocab_size))
        for m in range(s.n_modes):
            for f in range(s.n_sparse):
                p = base[rng.permutation(s.vocab_size)]
                self.cat_probs[m, f] = p / p.sum()
        self.cat_effect = rng.normal(0.0, 0.5, size=(s.n_sparse, s.vocab_size))
        self.w1 = rng.normal(0.0, 0.8, size=s.n_dense)
        self.w2 = rng.normal(0.0, 0.8, size=s.n_dense)
        n_seg = s.n_segments + 1                       # last one is the expansion segment
        self.seg_coef = np.column_stack([
            rng.normal(0.6, 1.0, size=n_seg),          # a_m
            rng.normal(0.0, 1.0, size=n_seg),          # c_m
            rng.normal(-0.8, 0.5, size=n_seg),         # b_m
        ])
        w = (np.arange(1, s.n_segments + 1, dtype=float)) ** -s.tail_exponent
        self.seg_probs = w / w.sum()
        feats = np.zeros((n_seg, s.segment_dim))
        feats[:, :3] = self.seg_coef + rng.normal(0.0, 0.1, size=(n_seg, 3))
        feats[:, 3:] = rng.normal(0.0, 1.0, size=(n_seg, s.segment_dim - 3))
        self.segment_features = feats

    def sample(self, rng: np.random.Generator, n: int, modes: list[int],
               segment: int | None = None) -> Table:
        s = self.spec
        mode = rng.choice(np.array(modes), size=n)
        seg = (rng.choice(s.n_segments, size=n, p=self.seg_probs) if segment is None
               else np.full(n, segment))
        g = self.mode_mean[mode] + rng.standard_normal((n, s.n_dense))
        sparse = np.empty((n, s.n_sparse), dtype=np.int64)
        for f in range(s.n_sparse):
            u = rng.random(n)
            cdf = np.cumsum(self.cat_probs[mode, f], axis=1)
            sparse[:, f] = np.minimum((u[:, None] > cdf).sum(axis=1), s.vocab_size - 1)
        s1 = g @ self.w1 + self.cat_effect[np.arange(s.n_sparse), sparse].sum(axis=1)
        s2 = g @ self.w2
        a, c, b = self.seg_coef[seg].T
        signal = a * s1 + c * s2 + np.einsum("ij,ij->i", self.mode_dir[mode], g)
        logit = self.mode_sign[mode] * signal + b + self.mode_offset[mode]
        p = 1.0 / (1.0 + np.exp(-logit))
        label = (rng.random(n) < p).astype(np.int64)
        # raw dense values are the inverse of the signed log transform of g
        raw = np.sign(g) * np.expm1(np.abs(g))
        return Table(raw, sparse, label, seg, mode + 1)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> SyntheticData:
    spec.validate()
    rng = np.random.default_rng(seed)
    world = _World(spec, rng)
    all_modes = list(range(spec.n_modes))
    phase1 = [m for m in all_modes if m != spec.holdout_mode - 1]
    out = SyntheticData(spec, segment_features=world.segment_features)
    for name, n in (("train", spec.train_rows), ("val", spec.val_rows), ("test", spec.test_rows)):
        out.tables[name] = world.sample(rng, n, phase1)
    if spec.holdout_mode:
        h = spec.holdout_mode - 1
        # the shift phase: half the stream comes from the withheld mode
        mixed = [world.sample(rng, spec.phase2_rows // 2, [h]),
                 world.sample(rng, spec.phase2_rows - spec.phase2_rows // 2, phase1)]
        out.tables["phase2"] = _concat(mixed, rng)
        out.tables["holdout_test"] = world.sample(rng, max(spec.phase2_rows // 2, 1), [h])
    if spec.new_segment_rows:
        out.tables["new_segment_train"] = world.sample(rng, spec.new_segment_rows, phase1, spec.n_segments)
        out.tables["new_segment_test"] = world.sample(rng, spec.new_segment_rows, phase1, spec.n_segments)
    return out


def _concat(tables: list[Table], rng: np.random.Generator) -> Table:
    order = rng.permutation(sum(len(t) for t in tables))
    cat = [np.concatenate([getattr(t, f) for t in tables])[order]
           for f in ("dense", "sparse", "label", "segment", "mode")]
    return Table(*cat)


def write_table(table: Table, path: str | Path) -> None:
    n_dense, n_sparse = table.dense.shape[1], table.sparse.shape[1]
    header = ([f"I{i + 1}" for i in range(n_dense)] + [f"C{i + 1}" for i in range(n_sparse)]
              + ["label", "seg"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(table)):
            w.writerow([repr(float(v)) for v in table.dense[i]]
                       + [f"c{f + 1}_{v}" for f, v in enumerate(table.sparse[i])]
                       + [int(table.label[i]), int(table.segment[i])])


def write_segment_features(features: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seg"] + [f"u_{i}" for i in range(features.shape[1])])
        for m, row in enumerate(features):
            w.writerow([m] + [repr(float(v)) for v in row])


def read_segment_features(path: str | Path) -> dict[int, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "seg" or any(h != f"u_{i}" for i, h in enumerate(header[1:])):
            raise SynthError(f"{path}: header must be seg,u_0,u_1,...")
        out = {}
        for n, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SynthError(f"{path}: row {n} has {len(row)} fields, expected {len(header)}")
            out[int(row[0])] = np.array([float(v) for v in row[1:]])
    return out


def write_dataset(data: SyntheticData, out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, table in data.tables.items():
        paths[name] = out_dir / f"{name}.csv"
        write_table(table, paths[name])
    paths["segments"] = out_dir / "segments.csv"
    write_segment_features(data.segment_features, paths["segments"])
    return paths
