"""CSV rows to encoded arrays: signed log on dense fields, frequency-ranked
indices on sparse fields, and a little-endian binary cache of the result."""

from __future__ import annotations

import csv
import json
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

ENC_MAGIC = b"USSRENC1"


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class Schema:
    dense: tuple[str, ...]
    sparse: tuple[str, ...]
    has_segment: bool

    @classmethod
    def from_header(cls, header: Sequence[str]) -> "Schema":
        if "label" not in header:
            raise FeatureError("header has no 'label' column")
        known = {"label", "seg"}
        unknown = [h for h in header if h not in known and not h[:1] in ("I", "C")]
        if unknown:
            raise FeatureError(f"unrecognised columns {unknown}")
        return cls(
            dense=tuple(h for h in header if h.startswith("I")),
            sparse=tuple(h for h in header if h.startswith("C")),
            has_segment="seg" in header,
        )


@dataclass
class FeatureStats:
    schema: Schema
    vocab: dict[str, dict[str, int]]
    cap: int
    embed_dim: int

    def field_sizes(self) -> list[int]:
        """Embedding rows needed per sparse field (index 0 included)."""
        return [max(self.vocab[f].values(), default=0) + 1 for f in self.schema.sparse]

    def to_json(self) -> str:
        return json.dumps({
            "dense": list(self.schema.dense),
            "sparse": list(self.schema.sparse),
            "has_segment": self.schema.has_segment,
            "vocab": {f: sorted(v.items(), key=lambda kv: kv[1]) for f, v in self.vocab.items()},
            "cap": self.cap,
            "embed_dim": self.embed_dim,
        }, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "FeatureStats":
        d = json.loads(text)
        return cls(
            schema=Schema(tuple(d["dense"]), tuple(d["sparse"]), d["has_segment"]),
            vocab={f: {k: i for k, i in pairs} for f, pairs in d["vocab"].items()},
            cap=d["cap"],
            embed_dim=d["embed_dim"],
        )


@dataclass
class EncodedExample:
    dense: np.ndarray
    sparse: np.ndarray
    label: int
    segment: int = 0


@dataclass
class EncodedData:
    """Column-wise encoded dataset; row ``i`` is one EncodedExample."""

    dense: np.ndarray
    sparse: np.ndarray
    label: np.ndarray
    segment: np.ndarray = field(default=None)

    def __post_init__(self):
        self.dense = np.asarray(self.dense, dtype=np.float64).reshape(len(self.label), -1)
        self.sparse = np.asarray(self.sparse, dtype=np.int64).reshape(len(self.label), -1)
        self.label = np.asarray(self.label, dtype=np.float64)
        if self.segment is None:
            self.segment = np.zeros(len(self.label), dtype=np.int64)
        self.segment = np.asarray(self.segment, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.label)

    def __getitem__(self, idx) -> "EncodedData":
        if isinstance(idx, (int, np.integer)):
            idx = [idx]
        return EncodedData(self.dense[idx], self.sparse[idx], self.label[idx], self.segment[idx])

    def example(self, i: int) -> EncodedExample:
        return EncodedExample(self.dense[i], self.sparse[i], int(self.label[i]), int(self.segment[i]))

    @classmethod
    def from_examples(cls, examples: Sequence[EncodedExample]) -> "EncodedData":
        return cls(
            np.array([e.dense for e in examples]), np.array([e.sparse for e in examples]),
            np.array([e.label for e in examples]), np.array([e.segment for e in examples]))

    @classmethod
    def concat(cls, parts: Sequence["EncodedData"]) -> "EncodedData":
        return cls(np.concatenate([p.dense for p in parts]), np.concatenate([p.sparse for p in parts]),
                   np.concatenate([p.label for p in parts]), np.concatenate([p.segment for p in parts]))


# ---------------------------------------------------------------- fitting

def rank_categories(counts: Counter, cap: int) -> dict[str, int]:
    """Descending frequency, ties by category string; ranks past ``cap`` go to 0."""
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return {cat: (rank if rank <= cap else 0) for rank, (cat, _) in enumerate(ordered, start=1)}


def fit_stats(rows: Iterable[dict], cap: int, embed_dim: int, schema: Schema | None = None) -> FeatureStats:
    if cap < 1:
        raise FeatureError(f"cap must be >= 1, got {cap}")
    rows = list(rows)
    if not rows:
        raise FeatureError("cannot fit feature statistics on an empty table")
    if schema is None:
        schema = Schema.from_header(list(rows[0]))
    counts = {f: Counter() for f in schema.sparse}
    for n, row in enumerate(rows, start=1):
        for f in schema.sparse:
            try:
                counts[f][row[f]] += 1
            except KeyError:
                raise FeatureError(f"row {n}: missing column {f!r}") from None
    return FeatureStats(schema, {f: rank_categories(c, cap) for f, c in counts.items()}, cap, embed_dim)


# ---------------------------------------------------------------- transform

def signed_log(v: float) -> float:
    return math.log1p(v) if v >= 0 else -math.log1p(-v)


def transform(row: dict, stats: FeatureStats, row_number: int = 0) -> EncodedExample:
    schema = stats.schema
    try:
        dense = np.array([signed_log(float(row[f] or 0.0)) for f in schema.dense])
        sparse = np.array([stats.vocab[f].get(row[f], 0) for f in schema.sparse], dtype=np.int64)
        label = int(row["label"])
        seg = int(row["seg"]) if schema.has_segment else 0
    except (KeyError, ValueError, TypeError) as exc:
        raise FeatureError(f"row {row_number}: malformed ({exc})") from None
    if label not in (0, 1):
        raise FeatureError(f"row {row_number}: label must be 0 or 1, got {label}")
    if seg < 0:
        raise FeatureError(f"row {row_number}: negative segment id {seg}")
    if not np.isfinite(dense).all():
        raise FeatureError(f"row {row_number}: non-finite dense value")
    return EncodedExample(dense, sparse, label, seg)


def transform_rows(rows: Iterable[dict], stats: FeatureStats) -> EncodedData:
    # numbered as file lines, the header being line 1
    examples = [transform(r, stats, n) for n, r in enumerate(rows, start=2)]
    if not examples:
        return EncodedData(np.zeros((0, len(stats.schema.dense))),
                           np.zeros((0, len(stats.schema.sparse)), dtype=np.int64),
                           np.zeros(0), np.zeros(0, dtype=np.int64))
    return EncodedData.from_examples(examples)


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FeatureError(f"{path}: empty file")
        Schema.from_header(reader.fieldnames)
        rows = []
        for n, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise FeatureError(f"{path}: row {n} has the wrong number of fields")
            rows.append(row)
    return rows


def load_encoded(path: str | Path, stats: FeatureStats) -> EncodedData:
    return transform_rows(read_csv(path), stats)


# ---------------------------------------------------------------- batching

def index_batches(n: int, batch_size: int, shuffle_seed: int | None = None) -> Iterator[np.ndarray]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def batch_iter(data: EncodedData, batch_size: int, shuffle_seed: int | None = None) -> Iterator[EncodedData]:
    for idx in index_batches(len(data), batch_size, shuffle_seed):
        yield data[idx]


# ---------------------------------------------------------------- binary cache

def _record_dtype(n_dense: int, n_sparse: int) -> np.dtype:
    return np.dtype([("dense", "<f8", (n_dense,)), ("sparse", "<i8", (n_sparse,)),
                     ("label", "u1"), ("segment", "<i8")])


def write_cache(data: EncodedData, path: str | Path) -> None:
    n, nd, ns = len(data), data.dense.shape[1], data.sparse.shape[1]
    rec = np.zeros(n, dtype=_record_dtype(nd, ns))
    rec["dense"], rec["sparse"] = data.dense, data.sparse
    rec["label"], rec["segment"] = data.label.astype(np.uint8), data.segment
    with open(path, "wb") as fh:
        fh.write(ENC_MAGIC + struct.pack("<QII", n, nd, ns) + rec.tobytes())


def read_cache(path: str | Path) -> EncodedData:
    raw = Path(path).read_bytes()
    head = len(ENC_MAGIC) + struct.calcsize("<QII")
    if raw[:len(ENC_MAGIC)] != ENC_MAGIC:
        raise FeatureError(f"{path}: expected magic {ENC_MAGIC!r}, found {raw[:len(ENC_MAGIC)]!r}")
    if len(raw) < head:
        raise FeatureError(f"{path}: truncated header")
    n, nd, ns = struct.unpack("<QII", raw[len(ENC_MAGIC):head])
    dtype = _record_dtype(nd, ns)
    if len(raw) != head + n * dtype.itemsize:
        raise FeatureError(f"{path}: expected {n} records, file size does not match")
    rec = np.frombuffer(raw, dtype=dtype, count=n, offset=head)
    return EncodedData(rec["dense"].copy(), rec["sparse"].copy(), rec["label"].astype(np.float64),
                       rec["segment"].copy())
